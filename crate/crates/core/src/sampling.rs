//! Deterministic randomness: per-path RNG streams and shifted Halton points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream used for the Brownian increments of one path.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Independent auxiliary stream of one path (randomized controls).
pub fn aux_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((path as u64) | (1 << 63));
    rng
}

const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base as u64) as f64 * inv;
        i /= base as u64;
        inv /= b;
    }
    out
}

/// Halton sequence in `[0,1)^dim` with a Cranley–Patterson shift drawn from `seed`.
pub struct ShiftedHalton {
    shift: Vec<f64>,
    index: u64,
}

impl ShiftedHalton {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "Halton dimension {dim} too large");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ShiftedHalton {
            shift: (0..dim).map(|_| rng.random::<f64>()).collect(),
            index: 0,
        }
    }

    /// Point with the given (0-based) index.
    pub fn point(&self, index: u64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let u = radical_inverse(index + 1, PRIMES[k]) + self.shift[k];
            *o = u - u.floor();
        }
    }
}

impl Iterator for ShiftedHalton {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        let mut p = vec![0.0; self.shift.len()];
        self.point(self.index, &mut p);
        self.index += 1;
        Some(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a = path_rng(7, 0).next_u64();
        assert_eq!(a, path_rng(7, 0).next_u64());
        assert_ne!(a, path_rng(7, 1).next_u64());
        assert_ne!(a, aux_rng(7, 0).next_u64());
    }

    #[test]
    fn halton_points_fill_the_cube() {
        let pts: Vec<_> = ShiftedHalton::new(2, 3).take(1000).collect();
        for p in &pts {
            assert!(p.iter().all(|&u| (0.0..1.0).contains(&u)));
        }
        let lower_left = pts.iter().filter(|p| p[0] < 0.5 && p[1] < 0.5).count();
        assert!((200..300).contains(&lower_left));
    }
}
