//! Explicit monotone finite-difference scheme for the obstacle HJB equation
//!
//! ```text
//! min( v − h, −∂ₜv − ½Tr(σσᵀD²v) − G(t,x,Dv) ) = 0,   v(T,·) = g,
//! ```
//!
//! with G = H*, a truncation H̄*ⁿ'ᵐ, or the dominating generator φ. Since
//! z σ⁻¹ f = Dv·f when z = Dvσ, H* is the max over controls of Dv·f + Γ,
//! which is discretized by upwinding each drift component separately. One
//! backward step is
//!
//! ```text
//! ṽ(x) = v(x) + dt [ ½Tr(σσᵀD²v) + ψ(max_c (b_c·D^{b_c}v + r_c)) ]
//! v⁻(x) = max(ṽ(x), h(t,x))
//! ```
//!
//! with coefficients frozen at the earlier time and ψ the identity or the
//! ρ-truncation. φ is written in the same form: |Dvσ| is the max of Dv·σe
//! over unit directions e, so its candidates are b = c(1+|x|)σe with reward
//! c(1+|x|^p). The box faces carry a zero-gradient condition implemented by
//! clamping neighbour indices.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::hamiltonian::{Generator, LocalHamiltonian, TruncationIndex};
use crate::linalg;
use crate::policy::PolicyField;
use crate::problem::ProblemSpec;

/// Fraction of the CFL bound used by [`SpaceTimeGrid::with_cfl`].
pub const CFL_SAFETY: f64 = 0.9;

/// Default obstacle-binding margin for the stopping region.
pub const DEFAULT_STOP_TOLERANCE: f64 = 1e-10;

/// Default interior window for reads.
pub const DEFAULT_CORE_FRACTION: f64 = 0.6;

/// Directions used for |z| in two dimensions.
const DIRECTIONS_2D: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeMeta {
    pub generator: Generator,
    /// Largest per-node CFL ratio met during the solve.
    pub cfl_ratio: f64,
    /// Nodes next to each face affected by the Neumann closure.
    pub boundary_band: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: SpaceTimeGrid,
    /// v per node, [time slice × space node].
    pub values: Vec<f64>,
    /// Pre-projection value ṽ; the last slice holds g.
    pub continuation: Vec<f64>,
    /// h per node (−∞ without an obstacle).
    pub obstacle: Vec<f64>,
    pub meta: SchemeMeta,
}

impl ValueField {
    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.nodes();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn continuation_slice(&self, k: usize) -> &[f64] {
        let n = self.grid.nodes();
        &self.continuation[k * n..(k + 1) * n]
    }

    pub fn obstacle_slice(&self, k: usize) -> &[f64] {
        let n = self.grid.nodes();
        &self.obstacle[k * n..(k + 1) * n]
    }

    /// Value at the nearest time slice, (bi)linearly interpolated in space.
    pub fn value_at(&self, t: f64, x: &[f64]) -> f64 {
        let g = &self.grid;
        let v = self.slice(g.nearest_slice(t));
        let locate = |c: f64| -> (usize, f64) {
            let s = ((c - g.lo) / g.dx()).clamp(0.0, (g.nx - 1) as f64);
            let i = (s.floor() as usize).min(g.nx - 2);
            (i, s - i as f64)
        };
        match g.dim {
            1 => {
                let (i, w) = locate(x[0]);
                (1.0 - w) * v[i] + w * v[i + 1]
            }
            _ => {
                let (i, wi) = locate(x[0]);
                let (j, wj) = locate(x[1]);
                let at = |a, b| v[g.flat([a, b])];
                (1.0 - wi) * ((1.0 - wj) * at(i, j) + wj * at(i, j + 1))
                    + wi * ((1.0 - wj) * at(i + 1, j) + wj * at(i + 1, j + 1))
            }
        }
    }

    pub fn core_nodes(&self, fraction: f64) -> Vec<usize> {
        self.grid.core_nodes(fraction)
    }

    /// Largest |v − h| over nodes where the projection was active (ṽ < h),
    /// and largest |v − ṽ| where it was not. Both are zero for a correct solve.
    pub fn projection_residuals(&self) -> (f64, f64) {
        let mut active: f64 = 0.0;
        let mut inactive: f64 = 0.0;
        let last = self.grid.nt * self.grid.nodes();
        for i in 0..last {
            let (v, c, h) = (self.values[i], self.continuation[i], self.obstacle[i]);
            if c < h {
                active = active.max((v - h).abs());
            } else {
                inactive = inactive.max((v - c).abs());
            }
        }
        (active, inactive)
    }

    /// Field export with columns `t,x1..xd,value,h,a_index,stop`, one row
    /// per node of each listed slice.
    pub fn write_csv<W: Write>(&self, policy: Option<&PolicyField>, slices: &[usize], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.grid.dim).map(|k| format!("x{k}")));
        header.extend(["value", "h", "a_index", "stop"].map(String::from));
        w.write_record(&header)?;
        let n = self.grid.nodes();
        let mut x = vec![0.0; self.grid.dim];
        for &k in slices {
            let t = self.grid.time(k);
            for i in 0..n {
                self.grid.point(i, &mut x);
                let mut row = vec![t.to_string()];
                row.extend(x.iter().map(f64::to_string));
                row.push(self.values[k * n + i].to_string());
                row.push(self.obstacle[k * n + i].to_string());
                match policy {
                    Some(p) => {
                        row.push(p.controls[k * n + i].to_string());
                        row.push(u8::from(p.stop_mask[k * n + i]).to_string());
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

/// Drift candidates and rewards of one node.
struct Candidates {
    drift: Vec<f64>,
    reward: Vec<f64>,
}

fn directions(dim: usize) -> Vec<f64> {
    match dim {
        1 => vec![1.0, -1.0],
        _ => {
            let scale = 1.0 / (PI / DIRECTIONS_2D as f64).cos();
            (0..DIRECTIONS_2D)
                .flat_map(|j| {
                    let a = 2.0 * PI * j as f64 / DIRECTIONS_2D as f64;
                    [scale * a.cos(), scale * a.sin()]
                })
                .collect()
        }
    }
}

fn candidates(
    spec: &ProblemSpec,
    local: &LocalHamiltonian,
    generator: Generator,
    dirs: &[f64],
    out: &mut Candidates,
) {
    let d = spec.dim;
    out.drift.clear();
    out.reward.clear();
    match generator {
        Generator::Dominating => {
            let g = spec.growth;
            let c = g.dominating_constant();
            let r = local.x_norm();
            let scale = c * (1.0 + r);
            let mut b = [0.0; 2];
            for e in dirs.chunks_exact(d) {
                linalg::mat_vec(local.sigma(), e, &mut b[..d]);
                out.drift.extend(b[..d].iter().map(|v| scale * v));
                out.reward.push(c * (1.0 + r.powf(g.p)));
            }
        }
        _ => {
            for a in 0..local.len() {
                out.drift.extend_from_slice(local.drift(a));
                out.reward.push(local.gamma(a));
            }
        }
    }
}

/// Explicit stability rate: dt·rate ≤ 1 keeps every stencil weight ≥ 0.
fn node_rate(sigma: &[f64], cand: &Candidates, dim: usize, dx: f64) -> Result<f64> {
    let (diag, off) = diffusion(sigma, dim);
    if dim == 2 && (diag[0] < off.abs() || diag[1] < off.abs()) {
        return Err(Error::NotMonotone(format!(
            "σσᵀ is not diagonally dominant (a11={}, a22={}, a12={off}); refine the coefficients or rotate the axes",
            diag[0], diag[1]
        )));
    }
    let mut drift_rate: f64 = 0.0;
    for b in cand.drift.chunks_exact(dim) {
        drift_rate = drift_rate.max(b.iter().map(|v| v.abs()).sum::<f64>());
    }
    Ok((diag[0] + diag[1] - off.abs()) / (dx * dx) + drift_rate / dx)
}

/// Diagonal and off-diagonal entries of a = σσᵀ (second diagonal entry 0 in 1D).
fn diffusion(sigma: &[f64], dim: usize) -> ([f64; 2], f64) {
    match dim {
        1 => ([sigma[0] * sigma[0], 0.0], 0.0),
        _ => {
            let a11 = sigma[0] * sigma[0] + sigma[1] * sigma[1];
            let a22 = sigma[2] * sigma[2] + sigma[3] * sigma[3];
            let a12 = sigma[0] * sigma[2] + sigma[1] * sigma[3];
            ([a11, a22], a12)
        }
    }
}

fn neighbour(grid: &SpaceTimeGrid, idx: [usize; 2], di: isize, dj: isize) -> usize {
    let step = |i: usize, d: isize| -> usize {
        (i as isize + d).clamp(0, grid.nx as isize - 1) as usize
    };
    grid.flat([step(idx[0], di), step(idx[1], dj)])
}

impl SpaceTimeGrid {
    /// Grid on the problem's box with `nx` nodes per axis and the number of
    /// time steps chosen so that the CFL ratio stays at [`CFL_SAFETY`],
    /// probing the coefficients at nine times.
    pub fn with_cfl(spec: &ProblemSpec, nx: usize, generator: Generator) -> Result<Self> {
        let probe = SpaceTimeGrid::new(spec.dim, spec.domain.lo, spec.domain.hi, nx, 0.0, spec.horizon, 1)?;
        let dirs = directions(spec.dim);
        let dx = probe.dx();
        let rate = (0..9)
            .into_par_iter()
            .map(|j| -> Result<f64> {
                let t = spec.horizon * j as f64 / 8.0;
                let mut local = LocalHamiltonian::new(spec);
                let mut cand = Candidates {
                    drift: Vec::new(),
                    reward: Vec::new(),
                };
                let mut x = vec![0.0; spec.dim];
                let mut worst: f64 = 0.0;
                for i in 0..probe.nodes() {
                    probe.point(i, &mut x);
                    local.update(spec, t, &x)?;
                    candidates(spec, &local, generator, &dirs, &mut cand);
                    worst = worst.max(node_rate(local.sigma(), &cand, spec.dim, dx)?);
                }
                Ok(worst)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let nt = if rate > 0.0 {
            ((spec.horizon * rate / CFL_SAFETY).ceil() as usize).max(1)
        } else {
            1
        };
        SpaceTimeGrid::new(spec.dim, spec.domain.lo, spec.domain.hi, nx, 0.0, spec.horizon, nt)
    }
}

/// Solves with H*, or with H̄*ⁿ'ᵐ when `trunc` is given.
pub fn solve(spec: &ProblemSpec, grid: &SpaceTimeGrid, trunc: Option<TruncationIndex>) -> Result<ValueField> {
    solve_with(spec, grid, Generator::from(trunc))
}

pub fn solve_with(spec: &ProblemSpec, grid: &SpaceTimeGrid, generator: Generator) -> Result<ValueField> {
    if spec.dim != grid.dim {
        return Err(Error::Dimension {
            what: "finite-difference solver",
            dim: spec.dim,
            allowed: "1 or 2, matching the grid",
        });
    }
    let n = grid.nodes();
    let nt = grid.nt;
    let dt = grid.dt();
    let dx = grid.dx();
    let d = spec.dim;
    let dirs = directions(d);
    let mut values = vec![0.0; (nt + 1) * n];
    let mut continuation = vec![0.0; (nt + 1) * n];
    let mut obstacle = vec![f64::NEG_INFINITY; (nt + 1) * n];

    let mut x = vec![0.0; d];
    for i in 0..n {
        grid.point(i, &mut x);
        let g = spec.terminal(&x)?;
        values[nt * n + i] = g;
        continuation[nt * n + i] = g;
        obstacle[nt * n + i] = spec.obstacle(grid.t_end, &x)?;
    }

    let mut cfl_ratio: f64 = 0.0;
    for k in (0..nt).rev() {
        let t = grid.time(k);
        let (head, tail) = values.split_at_mut((k + 1) * n);
        let prev = &tail[..n];
        let cur = &mut head[k * n..];
        let cont = &mut continuation[k * n..(k + 1) * n];
        let obs = &mut obstacle[k * n..(k + 1) * n];
        let step_ratio = cur
            .par_iter_mut()
            .zip(cont.par_iter_mut())
            .zip(obs.par_iter_mut())
            .enumerate()
            .map_init(
                || {
                    (
                        LocalHamiltonian::new(spec),
                        Candidates {
                            drift: Vec::new(),
                            reward: Vec::new(),
                        },
                        vec![0.0; d],
                    )
                },
                |(local, cand, x), (i, ((v_out, c_out), h_out))| -> Result<f64> {
                    grid.point(i, x);
                    local.update(spec, t, x)?;
                    candidates(spec, local, generator, &dirs, cand);
                    let ratio = dt * node_rate(local.sigma(), cand, d, dx)?;
                    if ratio > 1.0 + 1e-12 {
                        return Err(Error::Cfl {
                            step: k,
                            node: i,
                            ratio,
                        });
                    }
                    let idx = grid.axis_indices(i);
                    let v0 = prev[i];
                    let (diag, off) = diffusion(local.sigma(), d);
                    let mut plus = [0.0; 2];
                    let mut minus = [0.0; 2];
                    for axis in 0..d {
                        let (di, dj) = if axis == 0 { (1, 0) } else { (0, 1) };
                        plus[axis] = prev[neighbour(grid, idx, di, dj)];
                        minus[axis] = prev[neighbour(grid, idx, -di, -dj)];
                    }
                    let h2 = dx * dx;
                    let mut diff = 0.0;
                    for axis in 0..d {
                        diff += 0.5 * diag[axis] * (plus[axis] - 2.0 * v0 + minus[axis]) / h2;
                    }
                    if d == 2 && off != 0.0 {
                        let axial = plus[0] + minus[0] + plus[1] + minus[1];
                        let cross = if off > 0.0 {
                            prev[neighbour(grid, idx, 1, 1)] + prev[neighbour(grid, idx, -1, -1)]
                        } else {
                            prev[neighbour(grid, idx, 1, -1)] + prev[neighbour(grid, idx, -1, 1)]
                        };
                        diff += off.abs() * (2.0 * v0 + cross - axial) / (2.0 * h2);
                    }
                    let mut best = f64::NEG_INFINITY;
                    for (b, r) in cand.drift.chunks_exact(d).zip(&cand.reward) {
                        let mut s = *r;
                        for axis in 0..d {
                            s += if b[axis] > 0.0 {
                                b[axis] * (plus[axis] - v0) / dx
                            } else {
                                b[axis] * (v0 - minus[axis]) / dx
                            };
                        }
                        best = best.max(s);
                    }
                    if let Some(idx) = generator.truncation() {
                        best = idx.apply(best, local.x_norm());
                    }
                    let c = v0 + dt * (diff + best);
                    let h = spec.obstacle(t, x)?;
                    let v = c.max(h);
                    if !v.is_finite() {
                        return Err(Error::NonFinite { step: k, node: i });
                    }
                    *v_out = v;
                    *c_out = c;
                    *h_out = h;
                    Ok(ratio)
                },
            )
            .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
        cfl_ratio = cfl_ratio.max(step_ratio);
    }

    Ok(ValueField {
        grid: *grid,
        values,
        continuation,
        obstacle,
        meta: SchemeMeta {
            generator,
            cfl_ratio,
            boundary_band: 1,
        },
    })
}

/// Feedback control and stopping region from a solved field.
///
/// At slice k < nt the gradient of slice k+1 (central differences, one-sided
/// on the faces) gives z = ∇v σ(t_k, x) and the control is the first
/// maximizer of H(t_k, x, z, ·). A node stops when the obstacle binds by
/// more than `eps`, h − ṽ > eps, which selects the largest optimal stopping
/// time. The last slice stops everywhere.
pub fn extract_policy(spec: &ProblemSpec, field: &ValueField, eps: f64) -> Result<PolicyField> {
    let grid = field.grid;
    let n = grid.nodes();
    let nt = grid.nt;
    let d = grid.dim;
    let dx = grid.dx();
    let mut controls = vec![0u32; (nt + 1) * n];
    let mut stop = vec![false; (nt + 1) * n];
    controls[..nt * n]
        .par_chunks_mut(n)
        .zip(stop[..nt * n].par_chunks_mut(n))
        .enumerate()
        .try_for_each(|(k, (ctrl, stp))| -> Result<()> {
            let t = grid.time(k);
            let next = field.slice(k + 1);
            let cont = field.continuation_slice(k);
            let obs = field.obstacle_slice(k);
            let mut local = LocalHamiltonian::new(spec);
            let mut x = vec![0.0; d];
            let mut grad = vec![0.0; d];
            let mut z = vec![0.0; d];
            for i in 0..n {
                grid.point(i, &mut x);
                let idx = grid.axis_indices(i);
                for (axis, gk) in grad.iter_mut().enumerate() {
                    let (di, dj) = if axis == 0 { (1, 0) } else { (0, 1) };
                    let up = neighbour(&grid, idx, di, dj);
                    let down = neighbour(&grid, idx, -di, -dj);
                    let span = if up != i && down != i { 2.0 * dx } else { dx };
                    *gk = (next[up] - next[down]) / span;
                }
                local.update(spec, t, &x)?;
                let sigma = local.sigma();
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj = (0..d).map(|r| grad[r] * sigma[r * d + j]).sum();
                }
                ctrl[i] = local.sup(&z).argmax as u32;
                stp[i] = obs[i] - cont[i] > eps;
            }
            Ok(())
        })?;
    let (done, last) = controls.split_at_mut(nt * n);
    last.copy_from_slice(&done[(nt - 1) * n..]);
    stop[nt * n..].fill(true);
    PolicyField::new(grid, controls, stop, eps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderEntry {
    pub index: TruncationIndex,
    pub value_at_x0: f64,
    /// sup over the core of |ūₙ,ₘ − u| at t0.
    pub core_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderReport {
    pub entries: Vec<LadderEntry>,
    pub reference_at_x0: f64,
    /// Largest ūₙ,ₘ − ūₙ',ₘ over all nodes and pairs n < n'.
    pub n_violation: f64,
    /// Largest ūₙ,ₘ' − ūₙ,ₘ over all nodes and pairs m < m'.
    pub m_violation: f64,
    /// Node-pair comparisons behind each violation figure.
    pub comparisons: usize,
}

impl LadderReport {
    pub fn max_violation(&self) -> f64 {
        self.n_violation.max(self.m_violation)
    }
}

fn check_list(name: &str, list: &[u32]) -> Result<()> {
    if list.is_empty() || list.windows(2).any(|w| w[0] > w[1]) || list.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "{name} must be a non-empty nondecreasing list of levels >= 1"
        )));
    }
    Ok(())
}

/// Solves the truncated equation for every (n, m) and measures the
/// monotonicity in each index against the untruncated solve.
pub fn ladder(
    spec: &ProblemSpec,
    grid: &SpaceTimeGrid,
    n_list: &[u32],
    m_list: &[u32],
    core_fraction: f64,
) -> Result<LadderReport> {
    check_list("n list", n_list)?;
    check_list("m list", m_list)?;
    let reference = solve(spec, grid, None)?;
    let core = grid.core_nodes(core_fraction);
    let mut fields = Vec::new();
    for &m in m_list {
        for &n in n_list {
            fields.push(solve(spec, grid, Some(TruncationIndex::new(n, m)?))?);
        }
    }
    let at = |i: usize, j: usize| &fields[j * n_list.len() + i];
    let x0 = &spec.x0;
    let entries = m_list
        .iter()
        .enumerate()
        .flat_map(|(j, &m)| n_list.iter().enumerate().map(move |(i, &n)| (i, j, n, m)))
        .map(|(i, j, n, m)| {
            let f = at(i, j);
            let core_gap = core
                .iter()
                .map(|&c| (f.slice(0)[c] - reference.slice(0)[c]).abs())
                .fold(0.0, f64::max);
            LadderEntry {
                index: TruncationIndex { n, m },
                value_at_x0: f.value_at(grid.t0, x0),
                core_gap,
            }
        })
        .collect();
    let worst = |a: &ValueField, b: &ValueField| {
        a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| x - y)
            .fold(0.0, f64::max)
    };
    let mut n_violation: f64 = 0.0;
    let mut m_violation: f64 = 0.0;
    let mut comparisons = 0;
    for j in 0..m_list.len() {
        for i in 1..n_list.len() {
            n_violation = n_violation.max(worst(at(i - 1, j), at(i, j)));
            comparisons += 1;
        }
    }
    for i in 0..n_list.len() {
        for j in 1..m_list.len() {
            m_violation = m_violation.max(worst(at(i, j), at(i, j - 1)));
            comparisons += 1;
        }
    }
    Ok(LadderReport {
        entries,
        reference_at_x0: reference.value_at(grid.t0, x0),
        n_violation,
        m_violation,
        comparisons,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    /// Largest v₁ − v₂ over all nodes; ≤ 0 when the ordering holds.
    pub max_violation: f64,
    /// (slice, node) of the largest v₁ − v₂.
    pub worst_node: (usize, usize),
    /// Largest v₂ − v₁.
    pub max_gap: f64,
}

/// Solves two problems that differ only in their data on the same grid and
/// compares the fields node by node.
pub fn comparison_check(lower: &ProblemSpec, upper: &ProblemSpec, grid: &SpaceTimeGrid) -> Result<ComparisonReport> {
    let v1 = solve(lower, grid, None)?;
    let v2 = solve(upper, grid, None)?;
    compare_fields(&v1, &v2)
}

pub fn compare_fields(v1: &ValueField, v2: &ValueField) -> Result<ComparisonReport> {
    if v1.grid != v2.grid {
        return Err(Error::InvalidArgument("fields live on different grids".into()));
    }
    let n = v1.grid.nodes();
    let mut report = ComparisonReport {
        max_violation: f64::NEG_INFINITY,
        worst_node: (0, 0),
        max_gap: f64::NEG_INFINITY,
    };
    for (i, (a, b)) in v1.values.iter().zip(&v2.values).enumerate() {
        if a - b > report.max_violation {
            report.max_violation = a - b;
            report.worst_node = (i / n, i % n);
        }
        report.max_gap = report.max_gap.max(b - a);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceLevel {
    pub nx: usize,
    pub nt: usize,
    pub value: f64,
    /// |value − reference| when a reference is known, else the change from
    /// the previous level.
    pub error: Option<f64>,
}

/// v(t0, x0) over successive grids, each with CFL-derived time steps.
pub fn convergence_study(
    spec: &ProblemSpec,
    nx_list: &[usize],
    reference: Option<f64>,
) -> Result<Vec<ConvergenceLevel>> {
    let mut out: Vec<ConvergenceLevel> = Vec::new();
    for &nx in nx_list {
        let grid = SpaceTimeGrid::with_cfl(spec, nx, Generator::Sup)?;
        let value = solve(spec, &grid, None)?.value_at(grid.t0, &spec.x0);
        let error = match reference {
            Some(r) => Some((value - r).abs()),
            None => out.last().map(|p| (value - p.value).abs()),
        };
        out.push(ConvergenceLevel {
            nx,
            nt: grid.nt,
            value,
            error,
        });
    }
    Ok(out)
}
