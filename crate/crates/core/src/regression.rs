//! Cross-sectional least squares for conditional expectations on one time
//! slice of a path batch.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegressionBasis {
    /// Monomials of total degree ≤ `degree` in the standardized state.
    Polynomial { degree: usize },
    /// Equal-count cells per axis; inside each cell, a polynomial of degree
    /// `local_degree` (0 for piecewise constant, 1 for piecewise affine).
    LocalPartition { cells_per_axis: usize, local_degree: usize },
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis::LocalPartition {
            cells_per_axis: 16,
            local_degree: 1,
        }
    }
}

/// How Z is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZEstimator {
    /// One regression of Y_{i+1} on [φ(X), φ(X)·ΔB/√Δ]: the φ part is the
    /// conditional expectation, the ΔB part is Z.
    #[default]
    Joint,
    /// Z = Reg[Y_{i+1} ΔB | X] / Δ and E = Reg[Y_{i+1} | X] separately.
    Increment,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionOptions {
    pub basis: RegressionBasis,
    pub z_estimator: ZEstimator,
    /// A cell with fewer samples per column falls back to the slice-wide fit.
    pub min_samples_per_column: usize,
    /// Largest accepted condition number of the scaled Gram matrix.
    pub condition_cap: f64,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        RegressionOptions {
            basis: RegressionBasis::default(),
            z_estimator: ZEstimator::default(),
            min_samples_per_column: 20,
            condition_cap: 1e10,
        }
    }
}

impl RegressionOptions {
    pub fn validate(&self) -> Result<()> {
        match self.basis {
            RegressionBasis::Polynomial { degree } if degree > 8 => Err(Error::InvalidArgument(
                format!("polynomial degree {degree} above 8"),
            )),
            RegressionBasis::LocalPartition {
                cells_per_axis,
                local_degree,
            } if cells_per_axis == 0 || local_degree > 2 => Err(Error::InvalidArgument(format!(
                "local partition needs >= 1 cell and degree <= 2, got {cells_per_axis} cells, degree {local_degree}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Output of one slice regression.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceFit {
    /// E[Y_{i+1} | Xᵢ] per path.
    pub expectation: Vec<f64>,
    /// Zᵢ per path, [path × d].
    pub z: Vec<f64>,
    /// Y_{i+1} minus its fitted martingale part, per path; its mean is the
    /// mean of `expectation` when the fit has an intercept.
    pub adjusted: Vec<f64>,
    pub max_condition: f64,
    /// Cells that used the slice-wide fit.
    pub fallbacks: usize,
}

/// Monomial exponents of total degree ≤ `degree` in `dim` variables.
fn exponents(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; dim]];
    for total in 1..=degree {
        let mut cur = vec![0; dim];
        fill(&mut cur, 0, total, &mut out);
    }
    out
}

fn fill(cur: &mut Vec<usize>, k: usize, left: usize, out: &mut Vec<Vec<usize>>) {
    if k + 1 == cur.len() {
        cur[k] = left;
        out.push(cur.clone());
        return;
    }
    for e in (0..=left).rev() {
        cur[k] = e;
        fill(cur, k + 1, left - e, out);
    }
    cur[k] = 0;
}

/// Standardization of the state inside one group of samples.
struct Scaling {
    center: Vec<f64>,
    scale: Vec<f64>,
    /// Exponent rows restricted to axes with spread.
    exps: Vec<Vec<usize>>,
}

impl Scaling {
    fn new(x: &[f64], rows: &[usize], dim: usize, degree: usize) -> Self {
        let n = rows.len().max(1) as f64;
        let mut center = vec![0.0; dim];
        let mut scale = vec![0.0; dim];
        for &r in rows {
            for k in 0..dim {
                center[k] += x[r * dim + k];
            }
        }
        center.iter_mut().for_each(|c| *c /= n);
        for &r in rows {
            for k in 0..dim {
                scale[k] += (x[r * dim + k] - center[k]).powi(2);
            }
        }
        let spread: Vec<bool> = scale
            .iter_mut()
            .zip(&center)
            .map(|(s, c)| {
                *s = (*s / n).sqrt();
                *s > 1e-12 * (1.0 + c.abs())
            })
            .collect();
        let exps = exponents(dim, degree)
            .into_iter()
            .filter(|e| e.iter().zip(&spread).all(|(p, ok)| *p == 0 || *ok))
            .collect();
        Scaling { center, scale, exps }
    }

    fn features(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for e in &self.exps {
            let mut v = 1.0;
            for (k, p) in e.iter().enumerate() {
                if *p > 0 {
                    v *= ((x[k] - self.center[k]) / self.scale[k]).powi(*p as i32);
                }
            }
            out.push(v);
        }
    }

    fn len(&self) -> usize {
        self.exps.len()
    }
}

/// Solves min |A c − b| column-wise through the equilibrated normal
/// equations. Returns the coefficients and the condition number, or `None`
/// above the cap.
fn least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>, cap: f64) -> Option<(DMatrix<f64>, f64)> {
    let gram = a.transpose() * a;
    let k = gram.nrows();
    let d: Vec<f64> = (0..k).map(|i| gram[(i, i)].sqrt()).collect();
    if d.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
        return None;
    }
    let scaled = DMatrix::from_fn(k, k, |i, j| gram[(i, j)] / (d[i] * d[j]));
    let eig = SymmetricEigen::new(scaled.clone()).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond.is_nan() || cond > cap {
        return None;
    }
    let rhs = a.transpose() * b;
    let rhs = DMatrix::from_fn(k, rhs.ncols(), |i, j| rhs[(i, j)] / d[i]);
    let sol = scaled.cholesky()?.solve(&rhs);
    Some((DMatrix::from_fn(k, sol.ncols(), |i, j| sol[(i, j)] / d[i]), cond))
}

/// Equal-count cell of every sample, cells numbered with axis 0 slowest.
fn assign_cells(x: &[f64], dim: usize, cells: usize) -> (Vec<usize>, usize) {
    let n = x.len() / dim;
    let mut cell = vec![0usize; n];
    for k in 0..dim {
        let mut vals: Vec<f64> = (0..n).map(|p| x[p * dim + k]).collect();
        vals.sort_by(f64::total_cmp);
        let edges: Vec<f64> = (1..cells).map(|c| vals[c * n / cells]).collect();
        for p in 0..n {
            let v = x[p * dim + k];
            let c = edges.partition_point(|e| *e <= v);
            cell[p] = cell[p] * cells + c;
        }
    }
    (cell, cells.pow(dim as u32))
}

struct Fit {
    coef: DMatrix<f64>,
    scaling: Scaling,
    cond: f64,
}

/// Design for one group: base features φ, followed by φ·wⱼ for the joint
/// estimator.
#[allow(clippy::too_many_arguments)]
fn fit_group(
    opts: &RegressionOptions,
    rows: &[usize],
    x: &[f64],
    dim: usize,
    degree: usize,
    targets: &dyn Fn(usize, &mut Vec<f64>),
    weights: Option<&[f64]>,
    n_targets: usize,
) -> Option<Fit> {
    let scaling = Scaling::new(x, rows, dim, degree);
    let q = scaling.len();
    let cols = if weights.is_some() { q * (1 + dim) } else { q };
    if rows.len() < cols.max(1) * opts.min_samples_per_column.max(1) {
        return None;
    }
    let mut a = DMatrix::zeros(rows.len(), cols);
    let mut b = DMatrix::zeros(rows.len(), n_targets);
    let mut phi = Vec::with_capacity(q);
    let mut t = Vec::with_capacity(n_targets);
    for (r, &p) in rows.iter().enumerate() {
        scaling.features(&x[p * dim..(p + 1) * dim], &mut phi);
        for (c, v) in phi.iter().enumerate() {
            a[(r, c)] = *v;
        }
        if let Some(w) = weights {
            for j in 0..dim {
                for (c, v) in phi.iter().enumerate() {
                    a[(r, q * (1 + j) + c)] = v * w[p * dim + j];
                }
            }
        }
        targets(p, &mut t);
        for (j, v) in t.iter().enumerate() {
            b[(r, j)] = *v;
        }
    }
    let (coef, cond) = least_squares(&a, &b, opts.condition_cap)?;
    Some(Fit { coef, scaling, cond })
}

/// Regresses Y_{i+1} on the states of slice i.
///
/// `x` and `db` are [path × d], `y_next` is [path], `dt` the step length and
/// `node` is only used in error reports.
pub fn fit_slice(
    opts: &RegressionOptions,
    x: &[f64],
    dim: usize,
    y_next: &[f64],
    db: &[f64],
    dt: f64,
    node: usize,
) -> Result<SliceFit> {
    let n = y_next.len();
    let (degree, (cell, cells)) = match opts.basis {
        RegressionBasis::Polynomial { degree } => (degree, (vec![0; n], 1)),
        RegressionBasis::LocalPartition {
            cells_per_axis,
            local_degree,
        } => (local_degree, assign_cells(x, dim, cells_per_axis)),
    };
    let sqrt_dt = dt.sqrt();
    let w: Vec<f64> = db.iter().map(|v| v / sqrt_dt).collect();
    let joint = opts.z_estimator == ZEstimator::Joint;
    let n_targets = if joint { 1 } else { 1 + dim };
    let targets = |p: usize, out: &mut Vec<f64>| {
        out.clear();
        out.push(y_next[p]);
        if !joint {
            for j in 0..dim {
                out.push(y_next[p] * db[p * dim + j] / dt);
            }
        }
    };
    let weights = joint.then_some(w.as_slice());

    let all: Vec<usize> = (0..n).collect();
    let global = fit_group(opts, &all, x, dim, degree, &targets, weights, n_targets)
        .or_else(|| {
            let relaxed = RegressionOptions {
                min_samples_per_column: 1,
                ..*opts
            };
            fit_group(&relaxed, &all, x, dim, degree, &targets, weights, n_targets)
        })
        .ok_or(Error::SingularRegression {
            node,
            condition: f64::INFINITY,
        })?;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cells];
    for (p, c) in cell.iter().enumerate() {
        members[*c].push(p);
    }
    let fits: Vec<Option<Fit>> = if cells == 1 {
        vec![None]
    } else {
        members
            .par_iter()
            .map(|rows| fit_group(opts, rows, x, dim, degree, &targets, weights, n_targets))
            .collect()
    };
    let fallbacks = members
        .iter()
        .zip(&fits)
        .filter(|(rows, f)| !rows.is_empty() && f.is_none())
        .count()
        - usize::from(cells == 1);
    let max_condition = fits
        .iter()
        .flatten()
        .map(|f| f.cond)
        .fold(global.cond, f64::max);

    let mut expectation = vec![0.0; n];
    let mut z = vec![0.0; n * dim];
    let mut adjusted = vec![0.0; n];
    let mut phi = Vec::new();
    for p in 0..n {
        let fit = fits[cell[p]].as_ref().unwrap_or(&global);
        let q = fit.scaling.len();
        fit.scaling.features(&x[p * dim..(p + 1) * dim], &mut phi);
        let dot = |col: usize, off: usize| -> f64 {
            phi.iter()
                .enumerate()
                .map(|(c, v)| v * fit.coef[(off + c, col)])
                .sum()
        };
        expectation[p] = dot(0, 0);
        let mut martingale = 0.0;
        for j in 0..dim {
            let zj = if joint {
                dot(0, q * (1 + j)) / sqrt_dt
            } else {
                dot(1 + j, 0)
            };
            z[p * dim + j] = zj;
            martingale += zj * db[p * dim + j];
        }
        adjusted[p] = if joint { y_next[p] - martingale } else { y_next[p] };
    }
    Ok(SliceFit {
        expectation,
        z,
        adjusted,
        max_condition,
        fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn sample(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let db = (0..n).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        (x, db)
    }

    #[test]
    fn exponent_enumeration() {
        assert_eq!(exponents(1, 2), vec![vec![0], vec![1], vec![2]]);
        assert_eq!(exponents(2, 1), vec![vec![0, 0], vec![1, 0], vec![0, 1]]);
        assert_eq!(exponents(2, 2).len(), 6);
    }

    #[test]
    fn equal_count_cells() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let (cell, n) = assign_cells(&x, 1, 4);
        assert_eq!(n, 4);
        for c in 0..4 {
            assert_eq!(cell.iter().filter(|v| **v == c).count(), 25);
        }
        let (same, _) = assign_cells(&[1.0; 10], 1, 4);
        assert!(same.iter().all(|c| *c == same[0]));
    }

    #[test]
    fn recovers_affine_expectation_and_z() {
        let (x, db) = sample(20_000, 1);
        let dt = 0.01;
        // Y = 1 + 2x + (3 + x) ΔB exactly
        let y: Vec<f64> = x.iter().zip(&db).map(|(x, b)| 1.0 + 2.0 * x + (3.0 + x) * b).collect();
        for basis in [
            RegressionBasis::Polynomial { degree: 2 },
            RegressionBasis::LocalPartition {
                cells_per_axis: 8,
                local_degree: 1,
            },
        ] {
            let opts = RegressionOptions {
                basis,
                ..Default::default()
            };
            let fit = fit_slice(&opts, &x, 1, &y, &db, dt, 3).unwrap();
            for p in (0..x.len()).step_by(997) {
                assert!((fit.expectation[p] - (1.0 + 2.0 * x[p])).abs() < 1e-9);
                assert!((fit.z[p] - (3.0 + x[p])).abs() < 1e-9);
            }
            assert_eq!(fit.fallbacks, 0);
        }
    }

    #[test]
    fn increment_estimator_is_unbiased_for_z() {
        let (x, db) = sample(50_000, 2);
        let dt = 0.01;
        let y: Vec<f64> = x.iter().zip(&db).map(|(x, b)| x * x + 2.0 * b).collect();
        let opts = RegressionOptions {
            basis: RegressionBasis::Polynomial { degree: 2 },
            z_estimator: ZEstimator::Increment,
            ..Default::default()
        };
        let fit = fit_slice(&opts, &x, 1, &y, &db, dt, 0).unwrap();
        let mean_z = fit.z.iter().sum::<f64>() / fit.z.len() as f64;
        assert!((mean_z - 2.0).abs() < 0.2, "{mean_z}");
        assert!((fit.expectation[0] - x[0] * x[0]).abs() < 0.05);
    }

    #[test]
    fn degenerate_slice_keeps_intercept_and_z() {
        let (_, db) = sample(1000, 3);
        let x = vec![0.5; 1000];
        let y: Vec<f64> = db.iter().map(|b| 4.0 + 1.5 * b).collect();
        let fit = fit_slice(&RegressionOptions::default(), &x, 1, &y, &db, 0.01, 0).unwrap();
        assert!((fit.expectation[0] - 4.0).abs() < 1e-10);
        assert!((fit.z[0] - 1.5).abs() < 1e-10);
        let mean_adj = fit.adjusted.iter().sum::<f64>() / 1000.0;
        assert!((mean_adj - fit.expectation[0]).abs() < 1e-10);
    }

    #[test]
    fn sparse_cells_fall_back() {
        let (x, db) = sample(200, 4);
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let opts = RegressionOptions {
            basis: RegressionBasis::LocalPartition {
                cells_per_axis: 50,
                local_degree: 1,
            },
            ..Default::default()
        };
        let fit = fit_slice(&opts, &x, 1, &y, &db, 0.01, 0).unwrap();
        assert_eq!(fit.fallbacks, 50);
    }
}
