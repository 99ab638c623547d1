//! Euler–Maruyama simulation of the state process and Girsanov densities.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, CompensatedSum};
use crate::policy::PolicyField;
use crate::problem::ProblemSpec;
use crate::sampling::{aux_rng, path_rng};

/// Uniform time grid t0 = τ₀ < … < τ_N = T.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(t0.is_finite() && t_end.is_finite() && t0 < t_end) {
            return Err(Error::InvalidArgument(format!(
                "time grid needs t0 < T and steps >= 1, got [{t0}, {t_end}] with {steps} steps"
            )));
        }
        Ok(TimeGrid { t0, t_end, steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.t_end
        } else {
            self.t0 + i as f64 * self.dt()
        }
    }
}

/// How controls are chosen along a simulated path.
#[derive(Debug, Clone, Copy)]
pub enum ControlRule<'a> {
    Policy(&'a PolicyField),
    Constant(usize),
    /// Uniform over the control set, drawn from the path's auxiliary stream.
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    /// dX = σ dB.
    Uncontrolled,
    /// dX = f(t,X,a) dt + σ dB.
    Controlled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub grid: TimeGrid,
    pub dim: usize,
    pub count: usize,
    pub seed: u64,
    pub kind: PathKind,
    /// [path × (steps+1) × d]
    states: Vec<f64>,
    /// [path × steps × d]
    increments: Vec<f64>,
    /// Control index used on each step, [path × steps].
    controls: Option<Vec<u32>>,
    girsanov_log: Option<Vec<f64>>,
}

impl PathBatch {
    pub fn state(&self, path: usize, node: usize) -> &[f64] {
        let d = self.dim;
        let at = (path * (self.grid.steps + 1) + node) * d;
        &self.states[at..at + d]
    }

    /// Brownian increment over step `i` (from node i to i+1).
    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let d = self.dim;
        let at = (path * self.grid.steps + step) * d;
        &self.increments[at..at + d]
    }

    pub fn control(&self, path: usize, step: usize) -> Option<usize> {
        self.controls
            .as_ref()
            .map(|c| c[path * self.grid.steps + step] as usize)
    }

    pub fn has_controls(&self) -> bool {
        self.controls.is_some()
    }

    pub fn girsanov_log(&self) -> Option<&[f64]> {
        self.girsanov_log.as_deref()
    }

    pub fn x0(&self) -> &[f64] {
        self.state(0, 0)
    }

    /// All states at one node, [path × d].
    pub fn node_states(&self, node: usize) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(self.count * d);
        for p in 0..self.count {
            out.extend_from_slice(self.state(p, node));
        }
        out
    }

    /// All increments over one step, [path × d].
    pub fn step_increments(&self, step: usize) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(self.count * d);
        for p in 0..self.count {
            out.extend_from_slice(self.increment(p, step));
        }
        out
    }

    /// Records the controls a rule would pick along the existing paths,
    /// without changing the states.
    pub fn attach_controls(mut self, spec: &ProblemSpec, rule: ControlRule<'_>) -> Result<Self> {
        let n = self.grid.steps;
        let mut controls = vec![0u32; self.count * n];
        let this = &self;
        controls
            .par_chunks_mut(n)
            .enumerate()
            .try_for_each(|(p, out)| -> Result<()> {
                let mut aux = aux_rng(this.seed, p);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = pick(spec, rule, this.grid.node(i), this.state(p, i), &mut aux)? as u32;
                }
                Ok(())
            })?;
        self.controls = Some(controls);
        self.girsanov_log = None;
        Ok(self)
    }

    /// Computes and stores log M_T for every path.
    pub fn with_girsanov(mut self, spec: &ProblemSpec) -> Result<Self> {
        let logs = (0..self.count)
            .into_par_iter()
            .map(|p| girsanov_log(spec, &self, p))
            .collect::<Result<Vec<_>>>()?;
        self.girsanov_log = Some(logs);
        Ok(self)
    }

    /// Path dump with columns `path,node,t,x1..xd,a,logM`; `a` and `logM`
    /// are left empty when the batch has no controls.
    pub fn write_csv<W: Write>(&self, spec: &ProblemSpec, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["path".to_string(), "node".into(), "t".into()];
        header.extend((1..=self.dim).map(|k| format!("x{k}")));
        header.extend(["a".into(), "logM".into()]);
        w.write_record(&header)?;
        let dt = self.grid.dt();
        let mut theta = vec![0.0; self.dim];
        for p in 0..self.count {
            let mut log_m = CompensatedSum::default();
            for i in 0..=self.grid.steps {
                let t = self.grid.node(i);
                let mut row = vec![p.to_string(), i.to_string(), t.to_string()];
                row.extend(self.state(p, i).iter().map(f64::to_string));
                match self.controls.as_ref() {
                    Some(_) => {
                        row.push(if i < self.grid.steps {
                            self.control(p, i).unwrap().to_string()
                        } else {
                            String::new()
                        });
                        row.push(log_m.value().to_string());
                        if i < self.grid.steps {
                            let a = spec.controls.point(self.control(p, i).unwrap());
                            theta_into(spec, t, self.state(p, i), a, &mut theta)?;
                            let db = self.increment(p, i);
                            log_m.add(linalg::dot(&theta, db) - 0.5 * linalg::dot(&theta, &theta) * dt);
                        }
                    }
                    None => row.extend([String::new(), String::new()]),
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn pick<R: Rng>(spec: &ProblemSpec, rule: ControlRule<'_>, t: f64, x: &[f64], aux: &mut R) -> Result<usize> {
    let k = spec.controls.len();
    let i = match rule {
        ControlRule::Policy(policy) => policy.control_at(t, x)?,
        ControlRule::Constant(i) => i,
        ControlRule::UniformRandom => aux.random_range(0..k),
    };
    if i >= k {
        return Err(Error::Policy(format!("control index {i} out of range (set has {k})")));
    }
    Ok(i)
}

fn check_inputs(spec: &ProblemSpec, x0: &[f64], grid: &TimeGrid, t0: f64, count: usize) -> Result<()> {
    if x0.len() != spec.dim || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "initial state must be {} finite values",
            spec.dim
        )));
    }
    if grid.t0 != t0 {
        return Err(Error::InvalidArgument(format!(
            "time grid starts at {}, expected {t0}",
            grid.t0
        )));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("path count must be >= 1".into()));
    }
    Ok(())
}

/// X_{i+1} = X_i + σ(τᵢ, Xᵢ) ΔBᵢ.
pub fn simulate_uncontrolled(
    spec: &ProblemSpec,
    t0: f64,
    x0: &[f64],
    grid: TimeGrid,
    count: usize,
    seed: u64,
) -> Result<PathBatch> {
    simulate(spec, None, t0, x0, grid, count, seed)
}

/// X_{i+1} = X_i + f(τᵢ, Xᵢ, aᵢ) Δ + σ(τᵢ, Xᵢ) ΔBᵢ with aᵢ = policy(τᵢ, Xᵢ).
pub fn simulate_controlled(
    spec: &ProblemSpec,
    policy: &PolicyField,
    t0: f64,
    x0: &[f64],
    grid: TimeGrid,
    count: usize,
    seed: u64,
) -> Result<PathBatch> {
    simulate(spec, Some(ControlRule::Policy(policy)), t0, x0, grid, count, seed)
}

/// Controlled simulation with an arbitrary control rule.
pub fn simulate_with(
    spec: &ProblemSpec,
    rule: ControlRule<'_>,
    t0: f64,
    x0: &[f64],
    grid: TimeGrid,
    count: usize,
    seed: u64,
) -> Result<PathBatch> {
    simulate(spec, Some(rule), t0, x0, grid, count, seed)
}

fn simulate(
    spec: &ProblemSpec,
    rule: Option<ControlRule<'_>>,
    t0: f64,
    x0: &[f64],
    grid: TimeGrid,
    count: usize,
    seed: u64,
) -> Result<PathBatch> {
    check_inputs(spec, x0, &grid, t0, count)?;
    let d = spec.dim;
    let n = grid.steps;
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut states = vec![0.0; count * (n + 1) * d];
    let mut increments = vec![0.0; count * n * d];
    let mut controls = rule.map(|_| vec![0u32; count * n]);
    let mut control_chunks: Vec<Option<&mut [u32]>> = match controls.as_mut() {
        Some(c) => c.chunks_mut(n).map(Some).collect(),
        None => (0..count).map(|_| None).collect(),
    };

    states
        .par_chunks_mut((n + 1) * d)
        .zip(increments.par_chunks_mut(n * d))
        .zip(control_chunks.par_iter_mut())
        .enumerate()
        .try_for_each(|(p, ((xs, dbs), ctrl))| -> Result<()> {
            let mut rng = path_rng(seed, p);
            let mut aux = aux_rng(seed, p);
            let mut sigma = vec![0.0; d * d];
            let mut drift = vec![0.0; d];
            let mut noise = vec![0.0; d];
            xs[..d].copy_from_slice(x0);
            for i in 0..n {
                let t = grid.node(i);
                let (done, rest) = xs.split_at_mut((i + 1) * d);
                let x = &done[i * d..];
                let db = &mut dbs[i * d..(i + 1) * d];
                for v in db.iter_mut() {
                    *v = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
                }
                spec.sigma_into(t, x, &mut sigma)?;
                linalg::mat_vec(&sigma, db, &mut noise);
                let next = &mut rest[..d];
                match (rule, ctrl.as_deref_mut()) {
                    (Some(rule), Some(ctrl)) => {
                        let a = pick(spec, rule, t, x, &mut aux)?;
                        ctrl[i] = a as u32;
                        spec.drift_into(t, x, spec.controls.point(a), &mut drift)?;
                        for k in 0..d {
                            next[k] = x[k] + (drift[k] * dt + noise[k]);
                        }
                    }
                    _ => {
                        for k in 0..d {
                            next[k] = x[k] + noise[k];
                        }
                    }
                }
                if let Some(k) = next.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { step: i, node: k });
                }
            }
            Ok(())
        })?;
    drop(control_chunks);

    Ok(PathBatch {
        grid,
        dim: d,
        count,
        seed,
        kind: if rule.is_some() {
            PathKind::Controlled
        } else {
            PathKind::Uncontrolled
        },
        states,
        increments,
        controls,
        girsanov_log: None,
    })
}

fn theta_into(spec: &ProblemSpec, t: f64, x: &[f64], a: &[f64], out: &mut [f64]) -> Result<()> {
    let d = spec.dim;
    let mut sigma = vec![0.0; d * d];
    let mut inv = vec![0.0; d * d];
    let mut f = vec![0.0; d];
    spec.sigma_into(t, x, &mut sigma)?;
    match linalg::inverse_with_condition(&sigma, d, &mut inv) {
        Some(c) if c <= spec.condition_cap => {}
        other => {
            return Err(Error::SingularSigma {
                t,
                x: x.to_vec(),
                condition: other.unwrap_or(f64::INFINITY),
            })
        }
    }
    spec.drift_into(t, x, a, &mut f)?;
    linalg::mat_vec(&inv, &f, out);
    Ok(())
}

/// log M_T = Σ θᵢ·ΔBᵢ − ½|θᵢ|²Δ with θᵢ = σ⁻¹ f(τᵢ, Xᵢ, aᵢ), summed with
/// compensation.
pub fn girsanov_log(spec: &ProblemSpec, batch: &PathBatch, path: usize) -> Result<f64> {
    if !batch.has_controls() {
        return Err(Error::MissingControls);
    }
    if batch.dim != spec.dim {
        return Err(Error::BatchMismatch(format!(
            "batch dimension {} vs problem dimension {}",
            batch.dim, spec.dim
        )));
    }
    let dt = batch.grid.dt();
    let mut theta = vec![0.0; spec.dim];
    let mut sum = CompensatedSum::default();
    for i in 0..batch.grid.steps {
        let a = spec.controls.point(batch.control(path, i).unwrap());
        theta_into(spec, batch.grid.node(i), batch.state(path, i), a, &mut theta)?;
        sum.add(linalg::dot(&theta, batch.increment(path, i)));
        sum.add(-0.5 * linalg::dot(&theta, &theta) * dt);
    }
    Ok(sum.value())
}

/// M_T = exp(log M_T).
pub fn girsanov_density(spec: &ProblemSpec, batch: &PathBatch, path: usize) -> Result<f64> {
    Ok(girsanov_log(spec, batch, path)?.exp())
}

/// Sample mean and standard error.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut s = CompensatedSum::default();
    values.iter().for_each(|&v| s.add(v));
    let mean = s.value() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let mut ss = CompensatedSum::default();
    values.iter().for_each(|&v| ss.add((v - mean) * (v - mean)));
    (mean, (ss.value() / (n - 1.0)).sqrt() / n.sqrt())
}

/// E[sup_s |X_s|^q] with its standard error.
pub fn sup_moment(batch: &PathBatch, q: f64) -> (f64, f64) {
    let sups: Vec<f64> = (0..batch.count)
        .map(|p| {
            (0..=batch.grid.steps)
                .map(|i| linalg::norm(batch.state(p, i)).powf(q))
                .fold(0.0, f64::max)
        })
        .collect();
    mean_stderr(&sups)
}

/// E[sup_s |X_s − X'_s|^q] for two batches driven by the same increments.
pub fn sup_gap_moment(a: &PathBatch, b: &PathBatch, q: f64) -> Result<(f64, f64)> {
    if a.count != b.count || a.grid != b.grid || a.dim != b.dim {
        return Err(Error::BatchMismatch("coupled batches differ in shape".into()));
    }
    let mut diff = vec![0.0; a.dim];
    let sups: Vec<f64> = (0..a.count)
        .map(|p| {
            (0..=a.grid.steps)
                .map(|i| {
                    for (k, d) in diff.iter_mut().enumerate() {
                        *d = a.state(p, i)[k] - b.state(p, i)[k];
                    }
                    linalg::norm(&diff).powf(q)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(mean_stderr(&sups))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_builtin, ParamMap, ScalarFn};

    fn put(sigma0: f64) -> ProblemSpec {
        build_builtin(
            "bachelier_put",
            &ParamMap::new().with("sigma0", sigma0).with("K", 1).with("T", 1),
        )
        .unwrap()
    }

    fn drift_abs() -> ProblemSpec {
        build_builtin(
            "controlled_drift_abs",
            &ParamMap::new().with("kappa", 1).with("d", 1).with("h_floor", -10).with("T", 1),
        )
        .unwrap()
    }

    #[test]
    fn zero_diffusion_keeps_paths_constant() {
        let mut spec = put(0.2);
        spec.coefficients.sigma = vec![ScalarFn::Expr(crate::expr::Expr::Const(0.0))];
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let b = simulate_uncontrolled(&spec, 0.0, &[0.3], grid, 20, 1).unwrap();
        for p in 0..20 {
            for i in 0..=10 {
                assert_eq!(b.state(p, i), &[0.3]);
            }
        }
    }

    #[test]
    fn constant_sigma_terminal_variance() {
        let spec = put(0.2);
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let count = 20_000;
        let b = simulate_uncontrolled(&spec, 0.0, &[1.0], grid, count, 5).unwrap();
        let xt: Vec<f64> = (0..count).map(|p| b.state(p, 20)[0]).collect();
        let m = xt.iter().sum::<f64>() / count as f64;
        let var = xt.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (count - 1) as f64;
        let target = 0.04;
        assert!((var - target).abs() <= 3.0 * (2.0 / count as f64).sqrt() * target, "{var}");
    }

    #[test]
    fn reproducible_and_stream_separated() {
        let spec = put(0.2);
        let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let a = simulate_uncontrolled(&spec, 0.0, &[1.0], grid, 64, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate_uncontrolled(&spec, 0.0, &[1.0], grid, 64, 9).unwrap());
        assert_eq!(a, b);
        let c = simulate_uncontrolled(&spec, 0.0, &[1.0], grid, 64, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_drift_control_matches_uncontrolled() {
        let spec = put(0.2);
        let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let a = simulate_uncontrolled(&spec, 0.0, &[1.0], grid, 32, 3).unwrap();
        let b = simulate_with(&spec, ControlRule::Constant(0), 0.0, &[1.0], grid, 32, 3).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.increments, b.increments);
        assert_eq!(girsanov_density(&spec, &b, 0).unwrap(), 1.0);
        assert!(matches!(girsanov_log(&spec, &a, 0), Err(Error::MissingControls)));
    }

    #[test]
    fn constant_drift_shifts_the_mean() {
        let spec = drift_abs();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let count = 20_000;
        let b = simulate_with(&spec, ControlRule::Constant(2), 0.0, &[0.5], grid, count, 4).unwrap();
        let shift: Vec<f64> = (0..count).map(|p| b.state(p, 10)[0] - 0.5).collect();
        let (m, se) = mean_stderr(&shift);
        assert!((m - 1.0).abs() <= 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn constant_theta_log_density_telescopes() {
        let spec = drift_abs();
        let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let b = simulate_uncontrolled(&spec, 0.0, &[0.5], grid, 8, 2)
            .unwrap()
            .attach_controls(&spec, ControlRule::Constant(2))
            .unwrap();
        for p in 0..8 {
            let bt: f64 = (0..16).map(|i| b.increment(p, i)[0]).sum();
            let expected = bt - 0.5;
            assert!((girsanov_log(&spec, &b, p).unwrap() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn csv_has_header_and_one_row_per_node() {
        let spec = drift_abs();
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let b = simulate_with(&spec, ControlRule::UniformRandom, 0.0, &[0.5], grid, 3, 2).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&spec, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "path,node,t,x1,a,logM");
        assert_eq!(lines.len(), 1 + 3 * 5);
    }

    #[test]
    fn coupled_paths_move_together_for_additive_noise() {
        let spec = put(0.2);
        let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let a = simulate_uncontrolled(&spec, 0.0, &[1.0], grid, 100, 3).unwrap();
        let b = simulate_uncontrolled(&spec, 0.0, &[1.25], grid, 100, 3).unwrap();
        let (gap, _) = sup_gap_moment(&a, &b, 2.0).unwrap();
        assert!((gap - 0.0625).abs() < 1e-12);
    }
}
