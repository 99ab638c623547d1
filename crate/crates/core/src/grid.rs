//! Tensor space-time grid shared by the finite-difference solver and the
//! feedback policies it produces.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeGrid {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
    /// Nodes per axis, boundary included.
    pub nx: usize,
    pub nt: usize,
    pub t0: f64,
    pub t_end: f64,
}

impl SpaceTimeGrid {
    pub fn new(dim: usize, lo: f64, hi: f64, nx: usize, t0: f64, t_end: f64, nt: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Dimension {
                what: "finite-difference grid",
                dim,
                allowed: "1 or 2",
            });
        }
        if nx < 3 || nt == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid needs nx >= 3 and nt >= 1, got nx={nx}, nt={nt}"
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi && t0.is_finite() && t_end.is_finite() && t0 < t_end) {
            return Err(Error::InvalidArgument(format!(
                "invalid grid box [{lo}, {hi}] x [{t0}, {t_end}]"
            )));
        }
        Ok(SpaceTimeGrid {
            dim,
            lo,
            hi,
            nx,
            nt,
            t0,
            t_end,
        })
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / (self.nx - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.nt as f64
    }

    pub fn nodes(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.nt {
            self.t_end
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i == self.nx - 1 {
            self.hi
        } else {
            self.lo + i as f64 * self.dx()
        }
    }

    /// Per-axis indices of a flat node index; axis 0 varies slowest.
    pub fn axis_indices(&self, flat: usize) -> [usize; 2] {
        match self.dim {
            1 => [flat, 0],
            _ => [flat / self.nx, flat % self.nx],
        }
    }

    pub fn flat(&self, idx: [usize; 2]) -> usize {
        match self.dim {
            1 => idx[0],
            _ => idx[0] * self.nx + idx[1],
        }
    }

    pub fn point(&self, flat: usize, out: &mut [f64]) {
        let idx = self.axis_indices(flat);
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.coord(idx[k]);
        }
    }

    pub fn point_vec(&self, flat: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        self.point(flat, &mut p);
        p
    }

    fn nearest_axis(&self, v: f64) -> usize {
        let r = ((v - self.lo) / self.dx()).round();
        if r.is_nan() || r <= 0.0 {
            0
        } else {
            (r as usize).min(self.nx - 1)
        }
    }

    /// Nearest node; points outside the box map to the closest boundary node.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut idx = [0; 2];
        for (k, v) in x.iter().enumerate().take(self.dim) {
            idx[k] = self.nearest_axis(*v);
        }
        self.flat(idx)
    }

    pub fn nearest_slice(&self, t: f64) -> usize {
        let r = ((t - self.t0) / self.dt()).round();
        if r.is_nan() || r <= 0.0 {
            0
        } else {
            (r as usize).min(self.nt)
        }
    }

    /// Whether a node lies in the centred window covering `fraction` of each axis.
    pub fn in_core(&self, flat: usize, fraction: f64) -> bool {
        let mid = 0.5 * (self.lo + self.hi);
        let half = 0.5 * fraction * (self.hi - self.lo) * (1.0 + 1e-12);
        let idx = self.axis_indices(flat);
        (0..self.dim).all(|k| (self.coord(idx[k]) - mid).abs() <= half)
    }

    pub fn core_nodes(&self, fraction: f64) -> Vec<usize> {
        (0..self.nodes()).filter(|&i| self.in_core(i, fraction)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinates_and_lookup() {
        let g = SpaceTimeGrid::new(1, -3.0, 5.0, 401, 0.0, 1.0, 100).unwrap();
        assert_eq!(g.dx(), 0.02);
        assert_eq!(g.coord(400), 5.0);
        assert_eq!(g.nearest_node(&[1.0]), 200);
        assert_eq!(g.nearest_node(&[-9.0]), 0);
        assert_eq!(g.nearest_node(&[9.0]), 400);
        assert_eq!(g.nearest_slice(0.504), 50);
        assert_eq!(g.nearest_slice(2.0), 100);
        assert_eq!(g.time(100), 1.0);
    }

    #[test]
    fn core_window() {
        let g = SpaceTimeGrid::new(1, -5.0, 5.0, 11, 0.0, 1.0, 1).unwrap();
        assert_eq!(g.core_nodes(0.6), vec![2, 3, 4, 5, 6, 7, 8]);
        let g2 = SpaceTimeGrid::new(2, -1.0, 1.0, 5, 0.0, 1.0, 1).unwrap();
        assert_eq!(g2.point_vec(g2.flat([1, 3])), vec![-0.5, 0.5]);
        assert_eq!(g2.core_nodes(0.5).len(), 9);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            SpaceTimeGrid::new(3, 0.0, 1.0, 5, 0.0, 1.0, 1),
            Err(Error::Dimension { .. })
        ));
        assert!(SpaceTimeGrid::new(1, 0.0, 1.0, 2, 0.0, 1.0, 1).is_err());
        assert!(SpaceTimeGrid::new(1, 1.0, 0.0, 5, 0.0, 1.0, 1).is_err());
    }
}
