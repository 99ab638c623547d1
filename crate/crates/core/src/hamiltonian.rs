//! The Hamiltonian H(t,x,z,a) = z σ⁻¹(t,x) f(t,x,a) + Γ(t,x,a), its
//! supremum over the control set, and the truncations used by the ladder
//! studies.

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{dominating_value, ProblemSpec};

/// Relative tolerance under which two Hamiltonian values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianValue {
    pub value: f64,
    /// Index of the first maximizer in control-set order.
    pub argmax: usize,
    pub ties: usize,
}

/// Cutoff levels of H̄*ⁿ'ᵐ = H*⁺ ρₙ − H*⁻ ρₘ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TruncationIndex {
    pub n: u32,
    pub m: u32,
}

impl TruncationIndex {
    pub fn new(n: u32, m: u32) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument(format!(
                "truncation levels must be >= 1, got n={n}, m={m}"
            )));
        }
        Ok(TruncationIndex { n, m })
    }

    /// ψ(s) = ρₙ s⁺ − ρₘ s⁻ at a point of norm `x_norm`.
    #[inline]
    pub fn apply(&self, s: f64, x_norm: f64) -> f64 {
        if s >= 0.0 {
            s * cutoff_radial(self.n, x_norm)
        } else {
            s * cutoff_radial(self.m, x_norm)
        }
    }
}

/// Driver of the backward equations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Generator {
    /// H*.
    #[default]
    Sup,
    /// H̄*ⁿ'ᵐ.
    Truncated(TruncationIndex),
    /// The dominating generator φ.
    Dominating,
}

impl Generator {
    pub fn truncation(&self) -> Option<TruncationIndex> {
        match self {
            Generator::Truncated(idx) => Some(*idx),
            _ => None,
        }
    }
}

impl From<Option<TruncationIndex>> for Generator {
    fn from(t: Option<TruncationIndex>) -> Self {
        t.map_or(Generator::Sup, Generator::Truncated)
    }
}

/// ρₘ(x) = clamp(m + 1 − |x|, 0, 1).
pub fn cutoff(m: u32, x: &[f64]) -> f64 {
    cutoff_radial(m, linalg::norm(x))
}

#[inline]
pub fn cutoff_radial(m: u32, x_norm: f64) -> f64 {
    (m as f64 + 1.0 - x_norm).clamp(0.0, 1.0)
}

/// Coefficients of the problem frozen at one (t, x): everything needed to
/// evaluate H for many z without re-evaluating σ, f or Γ.
#[derive(Debug, Clone)]
pub struct LocalHamiltonian {
    dim: usize,
    controls: usize,
    x_norm: f64,
    sigma: Vec<f64>,
    sigma_inv: Vec<f64>,
    /// f(t,x,a) per control, row-major [control × d].
    drift: Vec<f64>,
    /// σ⁻¹ f per control, row-major [control × d].
    theta: Vec<f64>,
    gamma: Vec<f64>,
}

impl LocalHamiltonian {
    pub fn new(spec: &ProblemSpec) -> Self {
        let d = spec.dim;
        let k = spec.controls.len();
        LocalHamiltonian {
            dim: d,
            controls: k,
            x_norm: 0.0,
            sigma: vec![0.0; d * d],
            sigma_inv: vec![0.0; d * d],
            drift: vec![0.0; k * d],
            theta: vec![0.0; k * d],
            gamma: vec![0.0; k],
        }
    }

    /// Evaluates σ, σ⁻¹, f and Γ at (t, x) for every control.
    pub fn update(&mut self, spec: &ProblemSpec, t: f64, x: &[f64]) -> Result<()> {
        let d = self.dim;
        self.x_norm = linalg::norm(x);
        spec.sigma_into(t, x, &mut self.sigma)?;
        let cond = linalg::inverse_with_condition(&self.sigma, d, &mut self.sigma_inv);
        match cond {
            Some(c) if c <= spec.condition_cap => {}
            other => {
                return Err(Error::SingularSigma {
                    t,
                    x: x.to_vec(),
                    condition: other.unwrap_or(f64::INFINITY),
                })
            }
        }
        for (i, a) in spec.controls.iter().enumerate() {
            let f = &mut self.drift[i * d..(i + 1) * d];
            spec.drift_into(t, x, a, f)?;
            linalg::mat_vec(&self.sigma_inv, f, &mut self.theta[i * d..(i + 1) * d]);
            self.gamma[i] = spec.running_reward(t, x, a)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.controls
    }

    pub fn is_empty(&self) -> bool {
        self.controls == 0
    }

    pub fn x_norm(&self) -> f64 {
        self.x_norm
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn drift(&self, control: usize) -> &[f64] {
        &self.drift[control * self.dim..(control + 1) * self.dim]
    }

    /// θ = σ⁻¹ f for one control.
    pub fn theta(&self, control: usize) -> &[f64] {
        &self.theta[control * self.dim..(control + 1) * self.dim]
    }

    pub fn gamma(&self, control: usize) -> f64 {
        self.gamma[control]
    }

    #[inline]
    pub fn value(&self, z: &[f64], control: usize) -> f64 {
        linalg::dot(z, self.theta(control)) + self.gamma[control]
    }

    pub fn sup(&self, z: &[f64]) -> HamiltonianValue {
        let mut best = f64::NEG_INFINITY;
        let mut argmax = 0;
        for i in 0..self.controls {
            let v = self.value(z, i);
            if v > best {
                best = v;
                argmax = i;
            }
        }
        let tol = TIE_TOLERANCE * (1.0 + best.abs());
        let ties = (0..self.controls)
            .filter(|&i| self.value(z, i) >= best - tol)
            .count();
        HamiltonianValue {
            value: best,
            argmax,
            ties,
        }
    }

    /// Driver value for the given generator.
    #[inline]
    pub fn generator(&self, generator: Generator, growth: &crate::problem::GrowthConstants, z: &[f64]) -> f64 {
        match generator {
            Generator::Sup => self.sup(z).value,
            Generator::Truncated(idx) => idx.apply(self.sup(z).value, self.x_norm),
            Generator::Dominating => dominating_value(growth, self.x_norm, linalg::norm(z)),
        }
    }
}

/// H(t,x,z,a) for a control `a` of the problem's control set.
pub fn hamiltonian(spec: &ProblemSpec, t: f64, x: &[f64], z: &[f64], a: &[f64]) -> Result<f64> {
    check_dims(spec, x, z)?;
    let i = spec
        .controls
        .position(a)
        .ok_or_else(|| Error::UnknownControl(a.to_vec()))?;
    let mut local = LocalHamiltonian::new(spec);
    local.update(spec, t, x)?;
    Ok(local.value(z, i))
}

/// H*(t,x,z) = max over the control set of H(t,x,z,a).
pub fn sup_hamiltonian(spec: &ProblemSpec, t: f64, x: &[f64], z: &[f64]) -> Result<HamiltonianValue> {
    check_dims(spec, x, z)?;
    let mut local = LocalHamiltonian::new(spec);
    local.update(spec, t, x)?;
    Ok(local.sup(z))
}

/// H̄*ⁿ'ᵐ(t,x,z) = H*⁺ ρₙ(x) − H*⁻ ρₘ(x).
pub fn truncated_sup_hamiltonian(
    spec: &ProblemSpec,
    idx: TruncationIndex,
    t: f64,
    x: &[f64],
    z: &[f64],
) -> Result<f64> {
    let h = sup_hamiltonian(spec, t, x, z)?;
    Ok(idx.apply(h.value, linalg::norm(x)))
}

fn check_dims(spec: &ProblemSpec, x: &[f64], z: &[f64]) -> Result<()> {
    if x.len() != spec.dim || z.len() != spec.dim {
        return Err(Error::InvalidArgument(format!(
            "x and z must have dimension {}, got {} and {}",
            spec.dim,
            x.len(),
            z.len()
        )));
    }
    Ok(())
}

/// ℓ(z) with ℓ(z)·z = |z| and |ℓᵢ| ≤ 1.
///
/// ℓᵢ = (sᵢ − sᵢ₊₁)/zᵢ where sᵢ = |(zᵢ,…,z_d)|, evaluated as
/// zᵢ/(sᵢ + sᵢ₊₁) to avoid cancellation.
pub fn unit_direction(z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    unit_direction_into(z, &mut out);
    out
}

pub fn unit_direction_into(z: &[f64], out: &mut [f64]) {
    let mut tail = 0.0_f64;
    for i in (0..z.len()).rev() {
        let next = tail;
        tail = tail.hypot(z[i]);
        out[i] = if z[i] == 0.0 { 0.0 } else { z[i] / (tail + next) };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expression, Scope};
    use crate::problem::{build_builtin, ControlSet, ParamMap, ScalarFn};
    use proptest::prelude::*;

    fn drift_abs(d: usize) -> ProblemSpec {
        build_builtin(
            "controlled_drift_abs",
            &ParamMap::new()
                .with("kappa", 1)
                .with("d", d)
                .with("h_floor", -10)
                .with("T", 1),
        )
        .unwrap()
    }

    fn expr(spec: &ProblemSpec, text: &str) -> ScalarFn {
        let scope = Scope {
            state_dim: spec.dim,
            control_dim: spec.controls.dim(),
            params: &spec.params,
        };
        parse_expression(text, &scope).unwrap().into()
    }

    #[test]
    fn zero_drift_and_reward_give_zero() {
        let spec = build_builtin(
            "bachelier_put",
            &ParamMap::new().with("sigma0", 0.2).with("K", 1).with("T", 1),
        )
        .unwrap();
        assert_eq!(hamiltonian(&spec, 0.3, &[0.4], &[7.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(sup_hamiltonian(&spec, 0.3, &[0.4], &[-2.0]).unwrap().value, 0.0);
    }

    #[test]
    fn scalar_examples() {
        let spec = drift_abs(1);
        assert_eq!(hamiltonian(&spec, 0.0, &[0.0], &[2.0], &[-1.0]).unwrap(), -2.0);
        let h = sup_hamiltonian(&spec, 0.0, &[0.0], &[-3.0]).unwrap();
        assert_eq!((h.value, h.argmax, h.ties), (3.0, 0, 1));
        assert!(matches!(
            hamiltonian(&spec, 0.0, &[0.0], &[1.0], &[0.5]),
            Err(Error::UnknownControl(_))
        ));
    }

    #[test]
    fn two_dimensional_example() {
        let mut spec = drift_abs(2);
        spec.controls = ControlSet::new(1, vec![0.0, 3.0]).unwrap();
        spec.coefficients.drift = vec![expr(&spec, "a1"), expr(&spec, "0")];
        spec.coefficients.running_reward = expr(&spec, "a1 * a1");
        let h = hamiltonian(&spec, 0.0, &[0.1, 0.2], &[1.0, 1.0], &[3.0]).unwrap();
        assert_eq!(h, 12.0);
    }

    #[test]
    fn reward_only_argmax() {
        let mut spec = drift_abs(1);
        spec.controls = ControlSet::new(1, vec![0.0, 0.5, 1.0]).unwrap();
        spec.coefficients.running_reward = expr(&spec, "-(a1 - 0.5) * (a1 - 0.5)");
        let h = sup_hamiltonian(&spec, 0.0, &[0.3], &[0.0]).unwrap();
        assert_eq!(h.value, 0.0);
        assert_eq!(spec.controls.point(h.argmax), &[0.5]);
    }

    #[test]
    fn ties_are_counted_and_first_wins() {
        let spec = drift_abs(1);
        let h = sup_hamiltonian(&spec, 0.0, &[0.0], &[0.0]).unwrap();
        assert_eq!((h.argmax, h.ties), (0, 3));
    }

    #[test]
    fn singular_sigma_is_an_error() {
        let mut spec = drift_abs(1);
        spec.coefficients.sigma = vec![expr(&spec, "x1")];
        assert!(matches!(
            sup_hamiltonian(&spec, 0.0, &[0.0], &[1.0]),
            Err(Error::SingularSigma { .. })
        ));
    }

    #[test]
    fn cutoff_levels() {
        assert_eq!(cutoff(3, &[2.0]), 1.0);
        assert_eq!(cutoff(3, &[4.0]), 0.0);
        assert_eq!(cutoff(3, &[3.5]), 0.5);
        assert_eq!(cutoff(3, &[0.0, -3.5]), 0.5);
    }

    #[test]
    fn truncation_limits() {
        let spec = drift_abs(1);
        let idx = TruncationIndex::new(2, 3).unwrap();
        let exact = sup_hamiltonian(&spec, 0.0, &[1.5], &[2.0]).unwrap().value;
        assert_eq!(truncated_sup_hamiltonian(&spec, idx, 0.0, &[1.5], &[2.0]).unwrap(), exact);
        assert_eq!(truncated_sup_hamiltonian(&spec, idx, 0.0, &[4.0], &[2.0]).unwrap(), 0.0);
        assert!(TruncationIndex::new(0, 1).is_err());
    }

    #[test]
    fn unit_direction_examples() {
        assert_eq!(unit_direction(&[3.0, 4.0]), vec![1.0 / 3.0, 1.0]);
        assert_eq!(unit_direction(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(unit_direction(&[-2.0]), vec![-1.0]);
    }

    proptest! {
        #[test]
        fn unit_direction_is_a_norming_functional(z in prop::collection::vec(-1e6..1e6f64, 1..6)) {
            let l = unit_direction(&z);
            let n = linalg::norm(&z);
            prop_assert!((linalg::dot(&l, &z) - n).abs() <= 8.0 * f64::EPSILON * n);
            prop_assert!(l.iter().all(|v| v.abs() <= 1.0));
        }

        #[test]
        fn sup_is_convex_and_lipschitz(
            x in -6.0..6.0f64,
            z1 in -5.0..5.0f64,
            z2 in -5.0..5.0f64,
            lambda in 0.0..1.0f64,
        ) {
            let spec = drift_abs(1);
            let h = |z: f64| sup_hamiltonian(&spec, 0.5, &[x], &[z]).unwrap().value;
            let mix = lambda * z1 + (1.0 - lambda) * z2;
            prop_assert!(h(mix) <= lambda * h(z1) + (1.0 - lambda) * h(z2) + 1e-12);
            let g = spec.growth;
            let bound = g.c_f * g.c_sigma_inv * (1.0 + x.abs()) * (z1 - z2).abs();
            prop_assert!((h(z1) - h(z2)).abs() <= bound + 1e-12);
        }

        #[test]
        fn truncation_is_monotone_in_levels(
            x in -7.0..7.0f64,
            z in -5.0..5.0f64,
            n in 1u32..6,
            m in 1u32..6,
        ) {
            let mut spec = drift_abs(1);
            spec.coefficients.running_reward = expr(&spec, "x1 - 1");
            let tr = |n, m| {
                truncated_sup_hamiltonian(&spec, TruncationIndex::new(n, m).unwrap(), 0.2, &[x], &[z]).unwrap()
            };
            prop_assert!(tr(n + 1, m) >= tr(n, m));
            prop_assert!(tr(n, m + 1) <= tr(n, m));
            let exact = sup_hamiltonian(&spec, 0.2, &[x], &[z]).unwrap().value;
            let level = x.abs().ceil().max(1.0) as u32;
            prop_assert_eq!(tr(level.max(n), level.max(m)), exact);
        }
    }
}
