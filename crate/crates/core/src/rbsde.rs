//! Regression Monte Carlo for the discretely reflected BSDE
//!
//! ```text
//! Y_N = g(X_N)
//! Ỹᵢ  = E[Y_{i+1} | Xᵢ] + Δ·G(τᵢ, Xᵢ, Zᵢ)
//! Yᵢ  = max(Ỹᵢ, h(τᵢ, Xᵢ)),   ΔKᵢ = Yᵢ − Ỹᵢ
//! ```
//!
//! on paths of the uncontrolled diffusion, with the conditional expectation
//! and Zᵢ from [`crate::regression::fit_slice`].

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonian::{Generator, LocalHamiltonian, TruncationIndex};
use crate::problem::ProblemSpec;
use crate::regression::{fit_slice, RegressionOptions};
use crate::sde::{mean_stderr, PathBatch, PathKind, TimeGrid};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveDiagnostics {
    /// Largest regression condition number per node (node N has none).
    pub condition: Vec<f64>,
    /// Fraction of paths with ΔK > 0 per node.
    pub reflection_frequency: Vec<f64>,
    /// Regression cells that fell back to the slice-wide fit, per node.
    pub fallbacks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSolveResult {
    pub grid: TimeGrid,
    pub dim: usize,
    pub count: usize,
    pub generator: Generator,
    pub y0: f64,
    pub y0_stderr: f64,
    /// Per-path terms whose mean is y0; differences of these give paired
    /// standard errors between runs on the same batch.
    pub contributions: Vec<f64>,
    /// Yᵢ, [node × path].
    pub y: Vec<f64>,
    /// Zᵢ, [node × path × d] for nodes 0..N.
    pub z: Vec<f64>,
    /// ΔKᵢ, [node × path]; zero at node N.
    pub k_increments: Vec<f64>,
    /// h(τᵢ, Xᵢ), [node × path].
    pub obstacle: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

impl BackwardSolveResult {
    pub fn y_at(&self, node: usize) -> &[f64] {
        &self.y[node * self.count..(node + 1) * self.count]
    }

    pub fn k_at(&self, node: usize) -> &[f64] {
        &self.k_increments[node * self.count..(node + 1) * self.count]
    }

    pub fn obstacle_at(&self, node: usize) -> &[f64] {
        &self.obstacle[node * self.count..(node + 1) * self.count]
    }

    /// Summary with columns `node,t,mean_Y,mean_abs_Z,mean_dK,reflection_frequency`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "t", "mean_Y", "mean_abs_Z", "mean_dK", "reflection_frequency"])?;
        let p = self.count;
        let d = self.dim;
        for i in 0..=self.grid.steps {
            let mean = |v: &[f64]| v.iter().sum::<f64>() / p as f64;
            let z = if i < self.grid.steps {
                let zs = &self.z[i * p * d..(i + 1) * p * d];
                zs.chunks_exact(d)
                    .map(crate::linalg::norm)
                    .sum::<f64>()
                    / p as f64
            } else {
                0.0
            };
            w.write_record([
                i.to_string(),
                self.grid.node(i).to_string(),
                mean(self.y_at(i)).to_string(),
                z.to_string(),
                mean(self.k_at(i)).to_string(),
                self.diagnostics.reflection_frequency[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Solves with H*, or with H̄*ⁿ'ᵐ when `trunc` is given.
pub fn solve_rbsde(
    spec: &ProblemSpec,
    batch: &PathBatch,
    opts: &RegressionOptions,
    trunc: Option<TruncationIndex>,
) -> Result<BackwardSolveResult> {
    solve_rbsde_with(spec, batch, opts, Generator::from(trunc))
}

pub fn solve_rbsde_with(
    spec: &ProblemSpec,
    batch: &PathBatch,
    opts: &RegressionOptions,
    generator: Generator,
) -> Result<BackwardSolveResult> {
    opts.validate()?;
    if batch.dim != spec.dim {
        return Err(Error::BatchMismatch(format!(
            "batch dimension {} vs problem dimension {}",
            batch.dim, spec.dim
        )));
    }
    if batch.kind != PathKind::Uncontrolled {
        return Err(Error::BatchMismatch(
            "the backward scheme needs paths of the uncontrolled diffusion".into(),
        ));
    }
    if (batch.grid.t_end - spec.horizon).abs() > 1e-12 * spec.horizon.max(1.0) {
        return Err(Error::BatchMismatch(format!(
            "batch ends at {} but the horizon is {}",
            batch.grid.t_end, spec.horizon
        )));
    }
    let p = batch.count;
    let d = spec.dim;
    let n = batch.grid.steps;
    let dt = batch.grid.dt();
    let mut y = vec![0.0; (n + 1) * p];
    let mut z = vec![0.0; n * p * d];
    let mut k_inc = vec![0.0; (n + 1) * p];
    let mut obstacle = vec![0.0; (n + 1) * p];
    let mut diagnostics = SolveDiagnostics {
        condition: vec![0.0; n + 1],
        reflection_frequency: vec![0.0; n + 1],
        fallbacks: vec![0; n + 1],
    };

    let x_last = batch.node_states(n);
    let t_end = batch.grid.node(n);
    y[n * p..]
        .par_iter_mut()
        .zip(obstacle[n * p..].par_iter_mut())
        .enumerate()
        .try_for_each(|(q, (yo, ho))| -> Result<()> {
            let x = &x_last[q * d..(q + 1) * d];
            *yo = spec.terminal(x)?;
            *ho = spec.obstacle(t_end, x)?;
            Ok(())
        })?;

    let mut contributions = Vec::new();
    for i in (0..n).rev() {
        let t = batch.grid.node(i);
        let x = batch.node_states(i);
        let db = batch.step_increments(i);
        let (head, tail) = y.split_at_mut((i + 1) * p);
        let y_next = &tail[..p];
        let fit = fit_slice(opts, &x, d, y_next, &db, dt, i)?;
        diagnostics.condition[i] = fit.max_condition;
        diagnostics.fallbacks[i] = fit.fallbacks;

        let y_cur = &mut head[i * p..];
        let z_cur = &mut z[i * p * d..(i + 1) * p * d];
        let k_cur = &mut k_inc[i * p..(i + 1) * p];
        let h_cur = &mut obstacle[i * p..(i + 1) * p];
        z_cur.copy_from_slice(&fit.z);
        let drivers: Vec<f64> = (0..p)
            .into_par_iter()
            .map_init(
                || LocalHamiltonian::new(spec),
                |local, q| -> Result<f64> {
                    let xq = &x[q * d..(q + 1) * d];
                    local.update(spec, t, xq)?;
                    Ok(local.generator(generator, &spec.growth, &fit.z[q * d..(q + 1) * d]))
                },
            )
            .collect::<Result<_>>()?;
        y_cur
            .par_iter_mut()
            .zip(k_cur.par_iter_mut())
            .zip(h_cur.par_iter_mut())
            .enumerate()
            .try_for_each(|(q, ((yo, ko), ho))| -> Result<()> {
                let xq = &x[q * d..(q + 1) * d];
                let cont = fit.expectation[q] + dt * drivers[q];
                let h = spec.obstacle(t, xq)?;
                let v = cont.max(h);
                if !v.is_finite() {
                    return Err(Error::NonFinite { step: i, node: q });
                }
                *yo = v;
                *ko = v - cont;
                *ho = h;
                Ok(())
            })?;
        diagnostics.reflection_frequency[i] =
            k_cur.iter().filter(|v| **v > 0.0).count() as f64 / p as f64;
        if i == 0 {
            contributions = (0..p)
                .map(|q| {
                    if k_cur[q] > 0.0 {
                        y_cur[q]
                    } else {
                        fit.adjusted[q] + dt * drivers[q]
                    }
                })
                .collect();
        }
    }

    let (mean, stderr) = mean_stderr(&contributions);
    let y0 = if diagnostics.reflection_frequency[0] > 0.0 {
        y[0]
    } else {
        mean
    };
    Ok(BackwardSolveResult {
        grid: batch.grid,
        dim: d,
        count: p,
        generator,
        y0,
        y0_stderr: stderr,
        contributions,
        y,
        z,
        k_increments: k_inc,
        obstacle,
        diagnostics,
    })
}

/// max over (path, node) of (Y − h)·ΔK where ΔK > 0; 0 when the reflection
/// only acts on the barrier.
pub fn skorokhod_residual(result: &BackwardSolveResult) -> f64 {
    result
        .y
        .iter()
        .zip(&result.obstacle)
        .zip(&result.k_increments)
        .filter(|(_, k)| **k > 0.0)
        .map(|((y, h), k)| (y - h) * k)
        .fold(0.0, f64::max)
}

/// Mean of a − b with the standard error of the paired differences.
pub fn paired_difference(a: &BackwardSolveResult, b: &BackwardSolveResult) -> Result<(f64, f64)> {
    if a.count != b.count {
        return Err(Error::BatchMismatch("results come from different batches".into()));
    }
    let diffs: Vec<f64> = a
        .contributions
        .iter()
        .zip(&b.contributions)
        .map(|(x, y)| x - y)
        .collect();
    let (_, se) = mean_stderr(&diffs);
    Ok((a.y0 - b.y0, se))
}

#[derive(Debug, Clone, PartialEq)]
pub struct McLadderEntry {
    pub index: TruncationIndex,
    pub y0: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McLadderReport {
    pub entries: Vec<McLadderEntry>,
    pub reference_y0: f64,
    /// Largest (y0(n) − y0(n')) / SE over n < n' with fixed m; ≤ 2 passes.
    pub worst_n_ratio: f64,
    /// Largest (y0(m') − y0(m)) / SE over m < m' with fixed n; ≤ 2 passes.
    pub worst_m_ratio: f64,
    pub violations: usize,
}

/// y0 for every (n, m) on one batch, with monotonicity measured in units of
/// the paired standard error.
pub fn truncation_ladder_mc(
    spec: &ProblemSpec,
    batch: &PathBatch,
    opts: &RegressionOptions,
    n_list: &[u32],
    m_list: &[u32],
) -> Result<McLadderReport> {
    if n_list.is_empty() || m_list.is_empty() {
        return Err(Error::InvalidArgument("ladder lists must be non-empty".into()));
    }
    let reference = solve_rbsde(spec, batch, opts, None)?;
    let mut runs = Vec::new();
    for &m in m_list {
        for &n in n_list {
            let r = solve_rbsde(spec, batch, opts, Some(TruncationIndex::new(n, m)?))?;
            runs.push(Summary {
                index: TruncationIndex { n, m },
                y0: r.y0,
                stderr: r.y0_stderr,
                contributions: r.contributions,
            });
        }
    }
    let at = |i: usize, j: usize| &runs[j * n_list.len() + i];
    let ratio = |lo: &Summary, hi: &Summary| -> f64 {
        let diffs: Vec<f64> = lo
            .contributions
            .iter()
            .zip(&hi.contributions)
            .map(|(a, b)| a - b)
            .collect();
        let (_, se) = mean_stderr(&diffs);
        let gap = lo.y0 - hi.y0;
        if se > 0.0 {
            gap / se
        } else if gap > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    };
    let mut worst_n = f64::NEG_INFINITY;
    let mut worst_m = f64::NEG_INFINITY;
    let mut violations = 0;
    for j in 0..m_list.len() {
        for i in 1..n_list.len() {
            let r = ratio(at(i - 1, j), at(i, j));
            worst_n = worst_n.max(r);
            violations += usize::from(r > 2.0);
        }
    }
    for i in 0..n_list.len() {
        for j in 1..m_list.len() {
            let r = ratio(at(i, j), at(i, j - 1));
            worst_m = worst_m.max(r);
            violations += usize::from(r > 2.0);
        }
    }
    Ok(McLadderReport {
        entries: runs
            .iter()
            .map(|r| McLadderEntry {
                index: r.index,
                y0: r.y0,
                stderr: r.stderr,
            })
            .collect(),
        reference_y0: reference.y0,
        worst_n_ratio: worst_n,
        worst_m_ratio: worst_m,
        violations,
    })
}

struct Summary {
    index: TruncationIndex,
    y0: f64,
    stderr: f64,
    contributions: Vec<f64>,
}
