//! Forward Monte-Carlo evaluation of control-stopping strategies
//!
//! ```text
//! J(u, τ) = E^u[ Σ_{i<τ} Γ(τᵢ, Xᵢ, aᵢ) Δ + h(τ, X_τ) 1{τ<T} + g(X_T) 1{τ=T} ]
//! ```
//!
//! with τ the first grid node where the stop rule fires.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hjb::ValueField;
use crate::policy::PolicyField;
use crate::problem::ProblemSpec;
use crate::sde::{mean_stderr, simulate_uncontrolled, simulate_with, ControlRule, TimeGrid};

/// Martingale moment exponent used by [`martingale_check`].
pub const MOMENT_EXPONENT: f64 = 1.5;

#[derive(Debug, Clone, Copy)]
pub enum StopRule<'a> {
    /// Stop where the policy's stop mask is set.
    Policy(&'a PolicyField),
    /// Stop at t0, collecting h(t0, x0).
    Immediate,
    /// Run to T.
    Never,
}

#[derive(Debug, Clone)]
pub struct Strategy<'a> {
    pub name: String,
    pub control: ControlRule<'a>,
    pub stop: StopRule<'a>,
}

impl<'a> Strategy<'a> {
    /// The policy's controls with its own stopping region.
    pub fn from_policy(policy: &'a PolicyField) -> Self {
        Strategy {
            name: "extracted policy".into(),
            control: ControlRule::Policy(policy),
            stop: StopRule::Policy(policy),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PayoffBreakdown {
    /// Mean accumulated running reward.
    pub running: f64,
    /// Mean of h(τ, X_τ) 1{τ<T}.
    pub obstacle: f64,
    /// Mean of g(X_T) 1{τ=T}.
    pub terminal: f64,
    pub fraction_stopped_early: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoffEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
    pub breakdown: PayoffBreakdown,
}

/// The challengers every optimality check runs: each constant control and a
/// uniformly random control under the policy's stopping region, and the
/// policy's controls with immediate and with no early stopping.
pub fn default_challengers<'a>(spec: &ProblemSpec, policy: &'a PolicyField) -> Vec<Strategy<'a>> {
    let mut out: Vec<Strategy<'a>> = spec
        .controls
        .iter()
        .enumerate()
        .map(|(i, a)| Strategy {
            name: format!("constant a={a:?}"),
            control: ControlRule::Constant(i),
            stop: StopRule::Policy(policy),
        })
        .collect();
    out.push(Strategy {
        name: "uniform random control".into(),
        control: ControlRule::UniformRandom,
        stop: StopRule::Policy(policy),
    });
    out.push(Strategy {
        name: "policy control, immediate stop".into(),
        control: ControlRule::Policy(policy),
        stop: StopRule::Immediate,
    });
    out.push(Strategy {
        name: "policy control, never stop early".into(),
        control: ControlRule::Policy(policy),
        stop: StopRule::Never,
    });
    out
}

/// Payoff of the extracted policy.
pub fn evaluate(
    spec: &ProblemSpec,
    policy: &PolicyField,
    t0: f64,
    x0: &[f64],
    grid: TimeGrid,
    count: usize,
    seed: u64,
) -> Result<PayoffEstimate> {
    evaluate_strategy(spec, &Strategy::from_policy(policy), t0, x0, grid, count, seed)
}

/// (total, running, obstacle, terminal, stopped early) for one path.
type PathPayoff = (f64, f64, f64, f64, bool);

pub fn evaluate_strategy(
    spec: &ProblemSpec,
    strategy: &Strategy<'_>,
    t0: f64,
    x0: &[f64],
    grid: TimeGrid,
    count: usize,
    seed: u64,
) -> Result<PayoffEstimate> {
    if (grid.t_end - spec.horizon).abs() > 1e-12 * spec.horizon.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "simulation grid ends at {} but the horizon is {}",
            grid.t_end, spec.horizon
        )));
    }
    if let (StopRule::Immediate, true) = (strategy.stop, spec.has_obstacle()) {
        let h = spec.obstacle(t0, x0)?;
        return Ok(PayoffEstimate {
            mean: h,
            stderr: 0.0,
            count,
            breakdown: PayoffBreakdown {
                obstacle: h,
                fraction_stopped_early: 1.0,
                ..Default::default()
            },
        });
    }
    let batch = simulate_with(spec, strategy.control, t0, x0, grid, count, seed)?;
    let n = grid.steps;
    let dt = grid.dt();
    let stop_enabled = spec.has_obstacle() && matches!(strategy.stop, StopRule::Policy(_));
    // (total, running, obstacle part, terminal part, stopped early)
    let per_path: Vec<PathPayoff> = (0..count)
        .into_par_iter()
        .map(|p| -> Result<_> {
            let mut running = 0.0;
            for i in 0..n {
                let t = grid.node(i);
                let x = batch.state(p, i);
                if stop_enabled {
                    if let StopRule::Policy(policy) = strategy.stop {
                        if policy.stop_at(t, x)? {
                            let h = spec.obstacle(t, x)?;
                            return Ok((running + h, running, h, 0.0, true));
                        }
                    }
                }
                let a = spec.controls.point(batch.control(p, i).expect("controlled batch"));
                running += spec.running_reward(t, x, a)? * dt;
            }
            let g = spec.terminal(batch.state(p, n))?;
            Ok((running + g, running, 0.0, g, false))
        })
        .collect::<Result<_>>()?;
    let totals: Vec<f64> = per_path.iter().map(|v| v.0).collect();
    let (mean, stderr) = mean_stderr(&totals);
    let c = count as f64;
    let avg = |f: &dyn Fn(&PathPayoff) -> f64| per_path.iter().map(f).sum::<f64>() / c;
    Ok(PayoffEstimate {
        mean,
        stderr,
        count,
        breakdown: PayoffBreakdown {
            running: avg(&|v| v.1),
            obstacle: avg(&|v| v.2),
            terminal: avg(&|v| v.3),
            fraction_stopped_early: avg(&|v| f64::from(u8::from(v.4))),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChallengerResult {
    pub name: String,
    pub estimate: PayoffEstimate,
    pub combined_stderr: f64,
    /// challenger mean ≤ max(field value, optimal mean) + 2 combined SE
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityReport {
    pub field_value: f64,
    pub optimal: PayoffEstimate,
    /// |optimal − field value| ≤ 2 SE + scheme budget
    pub optimal_agrees: bool,
    pub challengers: Vec<ChallengerResult>,
}

impl OptimalityReport {
    pub fn passed(&self) -> bool {
        self.optimal_agrees && self.challengers.iter().all(|c| c.passed)
    }

    /// Report with columns `strategy,mean,stderr,fraction_stopped_early`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["strategy", "mean", "stderr", "fraction_stopped_early"])?;
        let rows = std::iter::once(("extracted policy", &self.optimal))
            .chain(self.challengers.iter().map(|c| (c.name.as_str(), &c.estimate)));
        for (name, e) in rows {
            w.write_record([
                name.to_string(),
                e.mean.to_string(),
                e.stderr.to_string(),
                e.breakdown.fraction_stopped_early.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates the policy and the challengers from the problem's x0 on a
/// common seed and compares them with the solved value.
#[allow(clippy::too_many_arguments)]
pub fn optimality_gap(
    spec: &ProblemSpec,
    field: &ValueField,
    policy: &PolicyField,
    challengers: &[Strategy<'_>],
    grid: TimeGrid,
    count: usize,
    seed: u64,
    scheme_budget: f64,
) -> Result<OptimalityReport> {
    let t0 = grid.t0;
    let x0 = &spec.x0;
    let field_value = field.value_at(t0, x0);
    let optimal = evaluate(spec, policy, t0, x0, grid, count, seed)?;
    let optimal_agrees = (optimal.mean - field_value).abs() <= 2.0 * optimal.stderr + scheme_budget;
    let challengers = challengers
        .iter()
        .map(|s| -> Result<ChallengerResult> {
            let estimate = evaluate_strategy(spec, s, t0, x0, grid, count, seed)?;
            let combined_stderr = estimate.stderr.hypot(optimal.stderr);
            Ok(ChallengerResult {
                name: s.name.clone(),
                estimate,
                combined_stderr,
                passed: estimate.mean <= optimal.mean + 2.0 * combined_stderr,
            })
        })
        .collect::<Result<_>>()?;
    Ok(OptimalityReport {
        field_value,
        optimal,
        optimal_agrees,
        challengers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub q: f64,
    pub moment: f64,
    pub moment_stderr: f64,
    pub count: usize,
}

/// E[M_T] and E[M_T^q] along uncontrolled paths from x0, with the controls
/// the rule picks along each path.
pub fn martingale_check(
    spec: &ProblemSpec,
    rule: ControlRule<'_>,
    x0: &[f64],
    grid: TimeGrid,
    count: usize,
    seed: u64,
) -> Result<MartingaleEstimate> {
    let batch = simulate_uncontrolled(spec, grid.t0, x0, grid, count, seed)?
        .attach_controls(spec, rule)?
        .with_girsanov(spec)?;
    let logs = batch.girsanov_log().expect("densities computed");
    let m: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
    let mq: Vec<f64> = logs.iter().map(|l| (MOMENT_EXPONENT * l).exp()).collect();
    let (mean, stderr) = mean_stderr(&m);
    let (moment, moment_stderr) = mean_stderr(&mq);
    Ok(MartingaleEstimate {
        mean,
        stderr,
        q: MOMENT_EXPONENT,
        moment,
        moment_stderr,
        count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpaceTimeGrid;
    use crate::problem::{build_builtin, ParamMap};

    fn put() -> ProblemSpec {
        build_builtin(
            "bachelier_put",
            &ParamMap::new().with("sigma0", 0.2).with("K", 1).with("T", 1),
        )
        .unwrap()
    }

    fn policy(spec: &ProblemSpec) -> PolicyField {
        let grid = SpaceTimeGrid::new(1, spec.domain.lo, spec.domain.hi, 11, 0.0, 1.0, 4).unwrap();
        PolicyField::constant(grid, 0)
    }

    #[test]
    fn never_stopping_reduces_to_terminal_payoff() {
        let spec = put();
        let p = policy(&spec);
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let e = evaluate(&spec, &p, 0.0, &[1.0], grid, 1000, 3).unwrap();
        let batch = simulate_uncontrolled(&spec, 0.0, &[1.0], grid, 1000, 3).unwrap();
        let g: Vec<f64> = (0..1000).map(|q| spec.terminal(batch.state(q, 10)).unwrap()).collect();
        assert_eq!(e.mean, mean_stderr(&g).0);
        assert_eq!(e.breakdown.fraction_stopped_early, 0.0);
        let sum = e.breakdown.running + e.breakdown.obstacle + e.breakdown.terminal;
        assert!((sum - e.mean).abs() < 1e-12);
    }

    #[test]
    fn stopping_everywhere_collects_the_obstacle() {
        let spec = put();
        let p = policy(&spec).with_uniform_stop(true);
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let e = evaluate(&spec, &p, 0.0, &[0.8], grid, 500, 3).unwrap();
        assert!((e.mean - 0.2).abs() < 1e-15);
        assert_eq!(e.stderr, 0.0);
        let s = Strategy {
            name: "now".into(),
            control: ControlRule::Constant(0),
            stop: StopRule::Immediate,
        };
        let i = evaluate_strategy(&spec, &s, 0.0, &[0.8], grid, 500, 3).unwrap();
        assert_eq!((i.mean, i.stderr), (spec.obstacle(0.0, &[0.8]).unwrap(), 0.0));
    }

    #[test]
    fn zero_drift_density_is_one() {
        let spec = put();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let m = martingale_check(&spec, ControlRule::Constant(0), &[1.0], grid, 100, 1).unwrap();
        assert_eq!((m.mean, m.stderr), (1.0, 0.0));
    }

    #[test]
    fn challengers_cover_every_control() {
        let spec = build_builtin(
            "controlled_drift_abs",
            &ParamMap::new().with("kappa", 1).with("d", 1).with("h_floor", -10).with("T", 1),
        )
        .unwrap();
        let p = policy(&spec);
        assert_eq!(default_challengers(&spec, &p).len(), 6);
    }
}
