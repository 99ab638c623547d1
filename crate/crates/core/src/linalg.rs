//! Small dense helpers for the d×d diffusion matrix.

use nalgebra::DMatrix;

/// Inverse of a row-major square matrix together with a condition estimate.
///
/// For d = 1 the condition estimate is 1 for any non-zero entry; for larger
/// d it is ‖σ‖_F·‖σ⁻¹‖_F, which bounds the spectral condition number from
/// above. Returns `None` when the matrix is numerically singular.
pub fn inverse_with_condition(sigma: &[f64], dim: usize, out: &mut [f64]) -> Option<f64> {
    debug_assert_eq!(sigma.len(), dim * dim);
    if dim == 1 {
        let s = sigma[0];
        if s == 0.0 || !s.is_finite() {
            return None;
        }
        out[0] = 1.0 / s;
        return out[0].is_finite().then_some(1.0);
    }
    let m = DMatrix::from_row_slice(dim, dim, sigma);
    let inv = m.clone().try_inverse()?;
    let mut fro_inv = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let v = inv[(i, j)];
            if !v.is_finite() {
                return None;
            }
            out[i * dim + j] = v;
            fro_inv += v * v;
        }
    }
    Some(m.norm() * fro_inv.sqrt())
}

/// Spectral data of σ: (‖σ⁻¹‖₂, cond₂(σ)). Infinite values flag singularity.
pub fn spectral_inverse_norm(sigma: &[f64], dim: usize) -> (f64, f64) {
    if dim == 1 {
        let s = sigma[0].abs();
        return if s > 0.0 && s.is_finite() {
            (1.0 / s, 1.0)
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
    }
    let m = DMatrix::from_row_slice(dim, dim, sigma);
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() || !max.is_finite() {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (1.0 / min, max / min)
    }
}

/// `out = m · v` for a row-major square matrix.
#[inline]
pub fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for i in 0..d {
        let row = &m[i * d..(i + 1) * d];
        out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_inverse() {
        let mut inv = [0.0; 4];
        let cond = inverse_with_condition(&[2.0, 0.0, 0.0, 4.0], 2, &mut inv).unwrap();
        assert_eq!(inv, [0.5, 0.0, 0.0, 0.25]);
        assert!(cond >= 2.0);
        assert!(inverse_with_condition(&[1.0, 2.0, 2.0, 4.0], 2, &mut inv).is_none());
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let (n, c) = spectral_inverse_norm(&[2.0, 0.0, 0.0, 4.0], 2);
        assert!((n - 0.5).abs() < 1e-14);
        assert!((c - 2.0).abs() < 1e-14);
        assert_eq!(spectral_inverse_norm(&[0.0], 1).0, f64::INFINITY);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..10 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 10.0);
    }
}
