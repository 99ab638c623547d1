//! Feedback policies: a control index and a stop flag per grid node.

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField {
    pub grid: SpaceTimeGrid,
    /// Control index per node, [time slice × space node].
    pub controls: Vec<u32>,
    /// Stop flag per node, [time slice × space node]. Every path stops at T
    /// regardless of the last slice.
    pub stop_mask: Vec<bool>,
    pub stop_tolerance: f64,
}

impl PolicyField {
    pub fn new(grid: SpaceTimeGrid, controls: Vec<u32>, stop_mask: Vec<bool>, stop_tolerance: f64) -> Result<Self> {
        let len = (grid.nt + 1) * grid.nodes();
        if controls.len() != len || stop_mask.len() != len {
            return Err(Error::Policy(format!(
                "policy arrays need {len} entries, got {} and {}",
                controls.len(),
                stop_mask.len()
            )));
        }
        Ok(PolicyField {
            grid,
            controls,
            stop_mask,
            stop_tolerance,
        })
    }

    /// Same control everywhere, never stopping before T.
    pub fn constant(grid: SpaceTimeGrid, control: u32) -> Self {
        let len = (grid.nt + 1) * grid.nodes();
        PolicyField {
            grid,
            controls: vec![control; len],
            stop_mask: vec![false; len],
            stop_tolerance: 0.0,
        }
    }

    fn index(&self, t: f64, x: &[f64]) -> Result<usize> {
        if x.len() != self.grid.dim || !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Policy(format!("cannot look up t={t}, x={x:?}")));
        }
        Ok(self.grid.nearest_slice(t) * self.grid.nodes() + self.grid.nearest_node(x))
    }

    /// Control index at the nearest slice and node.
    pub fn control_at(&self, t: f64, x: &[f64]) -> Result<usize> {
        Ok(self.controls[self.index(t, x)?] as usize)
    }

    /// Stop flag at the nearest slice and node.
    pub fn stop_at(&self, t: f64, x: &[f64]) -> Result<bool> {
        Ok(self.stop_mask[self.index(t, x)?])
    }

    pub fn slice_controls(&self, k: usize) -> &[u32] {
        let n = self.grid.nodes();
        &self.controls[k * n..(k + 1) * n]
    }

    pub fn slice_stop(&self, k: usize) -> &[bool] {
        let n = self.grid.nodes();
        &self.stop_mask[k * n..(k + 1) * n]
    }

    /// Copy with every stop flag before the last slice set to `stop`.
    pub fn with_uniform_stop(&self, stop: bool) -> Self {
        let mut out = self.clone();
        out.stop_mask.fill(stop);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_uses_nearest_node_and_slice() {
        let grid = SpaceTimeGrid::new(1, 0.0, 1.0, 3, 0.0, 1.0, 2).unwrap();
        let controls = (0..9).collect();
        let stop = (0..9).map(|i| i % 2 == 0).collect();
        let p = PolicyField::new(grid, controls, stop, 0.0).unwrap();
        assert_eq!(p.control_at(0.0, &[0.0]).unwrap(), 0);
        assert_eq!(p.control_at(0.6, &[0.9]).unwrap(), 5);
        assert_eq!(p.control_at(5.0, &[-2.0]).unwrap(), 6);
        assert!(p.stop_at(1.0, &[0.0]).unwrap());
        assert!(p.control_at(0.0, &[f64::NAN]).is_err());
        assert!(PolicyField::new(grid, vec![0; 8], vec![false; 9], 0.0).is_err());
    }
}
