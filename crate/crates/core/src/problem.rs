//! Control-stopping problem definitions.
//!
//! A [`ProblemSpec`] bundles the diffusion matrix σ(t,x), the controlled
//! drift f(t,x,a), the running reward Γ(t,x,a), the terminal reward g(x), the
//! obstacle h(t,x), a finite control set and the growth constants that make
//! the problem well posed. The value of the problem is
//!
//! ```text
//! sup over (u, τ) of  E^u[ ∫_t0^τ Γ ds + h(τ, X_τ) 1{τ<T} + g(X_T) 1{τ=T} ]
//! ```
//!
//! where X is driven by dX = f(t,X,u) dt + σ(t,X) dB.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::{BinaryOp, Env, EvalError, Expr, UnaryOp};
use crate::hamiltonian::LocalHamiltonian;
use crate::linalg;
use crate::sampling::ShiftedHalton;

/// Largest state dimension accepted by the Monte-Carlo solvers.
pub const MAX_DIM: usize = 5;

/// Default condition-number cap for σ.
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

pub type NativeFnPtr = dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync;

/// A coefficient given as a Rust closure of `(t, x, a)`.
#[derive(Clone)]
pub struct NativeFn {
    pub name: String,
    f: Arc<NativeFnPtr>,
}

impl NativeFn {
    pub fn new(name: &str, f: impl Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        NativeFn {
            name: name.to_string(),
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for NativeFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NativeFn({})", self.name)
    }
}

impl PartialEq for NativeFn {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && Arc::ptr_eq(&self.f, &other.f)
    }
}

/// A scalar coefficient: parsed expression or native closure.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarFn {
    Expr(Expr),
    Native(NativeFn),
}

impl ScalarFn {
    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], a: &[f64]) -> std::result::Result<f64, EvalError> {
        match self {
            ScalarFn::Expr(e) => e.eval(&Env { t, x, a }),
            ScalarFn::Native(n) => {
                let v = (n.f)(t, x, a);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(EvalError::NonFinite)
                }
            }
        }
    }

    pub fn as_expr(&self) -> Option<&Expr> {
        match self {
            ScalarFn::Expr(e) => Some(e),
            ScalarFn::Native(_) => None,
        }
    }
}

impl From<Expr> for ScalarFn {
    fn from(e: Expr) -> Self {
        ScalarFn::Expr(e)
    }
}

/// Finite discretization of the compact control space.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    dim: usize,
    coords: Vec<f64>,
}

impl ControlSet {
    /// `coords` holds the points row-major, `dim` coordinates each.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("control dimension must be >= 1".into()));
        }
        if coords.is_empty() || !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "control set needs a non-empty multiple of {dim} coordinates, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("control points must be finite".into()));
        }
        let set = ControlSet { dim, coords };
        for i in 0..set.len() {
            for j in 0..i {
                if set.point(i) == set.point(j) {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate control point {:?}",
                        set.point(i)
                    )));
                }
            }
        }
        Ok(set)
    }

    /// Cartesian grid `values^dim`, first coordinate varying slowest.
    pub fn grid(dim: usize, values: &[f64]) -> Result<Self> {
        let n = values.len().pow(dim as u32);
        let mut coords = Vec::with_capacity(n * dim);
        for idx in 0..n {
            let mut rem = idx;
            let mut p = vec![0.0; dim];
            for k in (0..dim).rev() {
                p[k] = values[rem % values.len()];
                rem /= values.len();
            }
            coords.extend(p);
        }
        ControlSet::new(dim, coords)
    }

    pub fn singleton(point: &[f64]) -> Result<Self> {
        ControlSet::new(point.len(), point.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn position(&self, a: &[f64]) -> Option<usize> {
        self.iter().position(|p| p == a)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// σ, f and Γ of the controlled diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    /// d×d diffusion matrix, row-major.
    pub sigma: Vec<ScalarFn>,
    /// d drift components.
    pub drift: Vec<ScalarFn>,
    pub running_reward: ScalarFn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthConstants {
    /// |f(t,x,a)| ≤ c_f (1 + |x|)
    pub c_f: f64,
    /// ‖σ⁻¹(t,x)‖ ≤ c_sigma_inv
    pub c_sigma_inv: f64,
    /// |Γ|, |g|, |h| ≤ c_poly (1 + |x|^p)
    pub c_poly: f64,
    pub p: f64,
}

impl GrowthConstants {
    /// Constant `c` of the dominating generator.
    pub fn dominating_constant(&self) -> f64 {
        (self.c_f * self.c_sigma_inv).max(self.c_poly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Zero-gradient extension across the box faces.
    Neumann,
}

/// Axis-aligned truncation box `[lo, hi]^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
    pub boundary: Boundary,
}

impl Domain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!("invalid domain [{lo}, {hi}]")));
        }
        Ok(Domain {
            lo,
            hi,
            boundary: Boundary::Neumann,
        })
    }

    /// Largest |x| over the box in dimension `dim`.
    pub fn radius(&self, dim: usize) -> f64 {
        self.lo.abs().max(self.hi.abs()) * (dim as f64).sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|&v| v >= self.lo && v <= self.hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub name: String,
    pub dim: usize,
    pub coefficients: CoefficientField,
    pub terminal: ScalarFn,
    /// `None` means no obstacle (h ≡ −∞): stopping before T is never rewarded.
    pub obstacle: Option<ScalarFn>,
    pub controls: ControlSet,
    pub horizon: f64,
    pub growth: GrowthConstants,
    pub domain: Domain,
    /// Initial state used by the Monte-Carlo routines.
    pub x0: Vec<f64>,
    /// Named parameters referenced by the expressions.
    pub params: BTreeMap<String, f64>,
    pub condition_cap: f64,
}

impl ProblemSpec {
    /// Checks shapes and scalar ranges; does not sample the coefficients.
    pub fn check_structure(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 || d > MAX_DIM {
            return Err(Error::Dimension {
                what: "problem",
                dim: d,
                allowed: "1..=5",
            });
        }
        if self.coefficients.sigma.len() != d * d {
            return Err(Error::InvalidArgument(format!(
                "sigma needs {} entries, got {}",
                d * d,
                self.coefficients.sigma.len()
            )));
        }
        if self.coefficients.drift.len() != d {
            return Err(Error::InvalidArgument(format!(
                "drift needs {d} entries, got {}",
                self.coefficients.drift.len()
            )));
        }
        if self.x0.len() != d || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("x0 must be {d} finite values")));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidArgument("horizon T must be > 0".into()));
        }
        let g = self.growth;
        if [g.c_f, g.c_sigma_inv, g.c_poly].iter().any(|c| !c.is_finite() || *c < 0.0)
            || !(g.p.is_finite() && g.p >= 1.0)
        {
            return Err(Error::InvalidArgument(
                "growth constants must be finite and non-negative with p >= 1".into(),
            ));
        }
        let mut exprs: Vec<(&ScalarFn, bool)> = self
            .coefficients
            .sigma
            .iter()
            .map(|s| (s, false))
            .chain(self.coefficients.drift.iter().map(|s| (s, true)))
            .chain([(&self.coefficients.running_reward, true), (&self.terminal, false)])
            .collect();
        if let Some(h) = &self.obstacle {
            exprs.push((h, false));
        }
        for (s, may_use_control) in exprs {
            if let Some(e) = s.as_expr() {
                let (sd, cd) = e.required_dims();
                if sd > d || cd > if may_use_control { self.controls.dim() } else { 0 } {
                    return Err(Error::InvalidArgument(format!(
                        "expression `{e}` refers to variables outside the problem dimensions"
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn sigma_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, s) in out.iter_mut().zip(&self.coefficients.sigma) {
            *o = s.eval(t, x, &[]).map_err(|e| eval_err("sigma", t, x, e))?;
        }
        Ok(())
    }

    #[inline]
    pub fn drift_into(&self, t: f64, x: &[f64], a: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, f) in out.iter_mut().zip(&self.coefficients.drift) {
            *o = f.eval(t, x, a).map_err(|e| eval_err("drift", t, x, e))?;
        }
        Ok(())
    }

    #[inline]
    pub fn running_reward(&self, t: f64, x: &[f64], a: &[f64]) -> Result<f64> {
        self.coefficients
            .running_reward
            .eval(t, x, a)
            .map_err(|e| eval_err("running reward", t, x, e))
    }

    #[inline]
    pub fn terminal(&self, x: &[f64]) -> Result<f64> {
        self.terminal
            .eval(self.horizon, x, &[])
            .map_err(|e| eval_err("terminal reward", self.horizon, x, e))
    }

    /// h(t,x), or −∞ when the problem has no obstacle.
    #[inline]
    pub fn obstacle(&self, t: f64, x: &[f64]) -> Result<f64> {
        match &self.obstacle {
            None => Ok(f64::NEG_INFINITY),
            Some(h) => h.eval(t, x, &[]).map_err(|e| eval_err("obstacle", t, x, e)),
        }
    }

    pub fn has_obstacle(&self) -> bool {
        self.obstacle.is_some()
    }

    pub fn with_terminal(mut self, g: impl Into<ScalarFn>) -> Self {
        self.terminal = g.into();
        self
    }

    pub fn with_obstacle(mut self, h: Option<ScalarFn>) -> Self {
        self.obstacle = h;
        self
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = x0;
        self
    }
}

fn eval_err(what: &'static str, t: f64, x: &[f64], source: EvalError) -> Error {
    Error::Eval {
        what,
        t,
        x: x.to_vec(),
        source,
    }
}

/// String-valued builtin parameters (`key=value` pairs from the command line).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamMap(BTreeMap<String, String>);

impl ParamMap {
    pub fn new() -> Self {
        ParamMap::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Parses `key=value`.
    pub fn parse_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got `{pair}`")))?;
        self.insert(k.trim(), v.trim());
        Ok(())
    }

    pub(crate) fn number(&self, family: &str, key: &str) -> Result<f64> {
        let raw = self.get(key).ok_or_else(|| Error::MissingParam {
            family: family.to_string(),
            key: key.to_string(),
        })?;
        parse_number(key, raw)
    }

    pub(crate) fn number_or(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key).map_or(Ok(default), |raw| parse_number(key, raw))
    }

    fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.0.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::InvalidParam {
                key: k.clone(),
                reason: format!("unknown parameter (expected one of {})", allowed.join(", ")),
            }),
            None => Ok(()),
        }
    }
}

pub(crate) fn parse_number(key: &str, raw: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::InvalidParam {
            key: key.to_string(),
            reason: format!("`{raw}` is not a finite number"),
        })
}

fn require(key: &str, ok: bool, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParam {
            key: key.to_string(),
            reason: reason.to_string(),
        })
    }
}

pub const BUILTIN_NAMES: [&str; 4] = [
    "bachelier_put",
    "controlled_drift_abs",
    "decaying_obstacle",
    "custom",
];

/// Instantiates a builtin problem family.
///
/// * `bachelier_put` (`sigma0`, `K`, `T`; optional `lo`, `hi`, `x0`):
///   f ≡ 0, Γ ≡ 0, σ ≡ σ₀, g = h = (K − x)⁺.
/// * `controlled_drift_abs` (`kappa`, `d`, `h_floor`, `T`; optional `lo`,
///   `hi`, `x0`): σ ≡ I, f = a over {−κ,0,κ}^d, Γ ≡ 0, g = |x|, h ≡ h_floor.
/// * `decaying_obstacle` (`beta` plus the `bachelier_put` keys):
///   h(t,x) = (K − x)⁺ (1 + β(T − t)).
/// * `custom`: the keys of the problem-file format, see
///   [`crate::problem_file`].
pub fn build_builtin(name: &str, params: &ParamMap) -> Result<ProblemSpec> {
    let spec = match name {
        "bachelier_put" => bachelier(name, params, None)?,
        "decaying_obstacle" => {
            let beta = params.number(name, "beta")?;
            require("beta", beta >= 0.0, "must be >= 0")?;
            bachelier(name, params, Some(beta))?
        }
        "controlled_drift_abs" => controlled_drift_abs(params)?,
        "custom" => return crate::problem_file::custom_from_params(params),
        other => return Err(Error::UnknownBuiltin(other.to_string())),
    };
    spec.check_structure()?;
    Ok(spec)
}

fn bachelier(family: &str, params: &ParamMap, beta: Option<f64>) -> Result<ProblemSpec> {
    let mut allowed = vec!["sigma0", "K", "T", "lo", "hi", "x0"];
    if beta.is_some() {
        allowed.push("beta");
    }
    params.reject_unknown(&allowed)?;
    let sigma0 = params.number(family, "sigma0")?;
    let strike = params.number(family, "K")?;
    let horizon = params.number(family, "T")?;
    require("sigma0", sigma0 > 0.0, "must be > 0")?;
    require("T", horizon > 0.0, "must be > 0")?;
    let lo = params.number_or("lo", strike - 4.0)?;
    let hi = params.number_or("hi", strike + 4.0)?;
    let x0 = params.number_or("x0", strike)?;
    let domain = Domain::new(lo, hi)?;
    require("x0", domain.contains(&[x0]), "must lie in the domain")?;

    let k = Expr::param("K", strike);
    let put = Expr::binary(
        BinaryOp::Max,
        Expr::binary(BinaryOp::Sub, k, Expr::state(0)),
        Expr::Const(0.0),
    );
    let mut params_used = BTreeMap::from([
        ("K".to_string(), strike),
        ("sigma0".to_string(), sigma0),
        ("T".to_string(), horizon),
    ]);
    let obstacle = match beta {
        None => put.clone(),
        Some(b) => {
            params_used.insert("beta".into(), b);
            // (K - x)^+ * (1 + beta * (T - t))
            Expr::binary(
                BinaryOp::Mul,
                put.clone(),
                Expr::binary(
                    BinaryOp::Add,
                    Expr::Const(1.0),
                    Expr::binary(
                        BinaryOp::Mul,
                        Expr::param("beta", b),
                        Expr::binary(BinaryOp::Sub, Expr::param("T", horizon), Expr::time()),
                    ),
                ),
            )
        }
    };
    let amplitude = 1.0 + beta.unwrap_or(0.0) * horizon;
    Ok(ProblemSpec {
        name: family.to_string(),
        dim: 1,
        coefficients: CoefficientField {
            sigma: vec![Expr::param("sigma0", sigma0).into()],
            drift: vec![Expr::Const(0.0).into()],
            running_reward: Expr::Const(0.0).into(),
        },
        terminal: put.into(),
        obstacle: Some(obstacle.into()),
        controls: ControlSet::singleton(&[0.0])?,
        horizon,
        growth: GrowthConstants {
            c_f: 1.0,
            c_sigma_inv: 1.0 / sigma0,
            c_poly: amplitude * strike.abs().max(1.0),
            p: 1.0,
        },
        domain,
        x0: vec![x0],
        params: params_used,
        condition_cap: DEFAULT_CONDITION_CAP,
    })
}

fn controlled_drift_abs(params: &ParamMap) -> Result<ProblemSpec> {
    let family = "controlled_drift_abs";
    params.reject_unknown(&["kappa", "d", "h_floor", "T", "lo", "hi", "x0"])?;
    let kappa = params.number(family, "kappa")?;
    let d_raw = params.number(family, "d")?;
    let h_floor = params.number(family, "h_floor")?;
    let horizon = params.number(family, "T")?;
    require("kappa", kappa > 0.0, "must be > 0")?;
    require(
        "d",
        d_raw.fract() == 0.0 && (1.0..=MAX_DIM as f64).contains(&d_raw),
        "must be an integer in 1..=5",
    )?;
    require("T", horizon > 0.0, "must be > 0")?;
    let d = d_raw as usize;
    let domain = Domain::new(params.number_or("lo", -6.0)?, params.number_or("hi", 6.0)?)?;
    let x0 = vec![params.number_or("x0", 0.5)?; d];
    require("x0", domain.contains(&x0), "must lie in the domain")?;

    let sigma = (0..d * d)
        .map(|k| Expr::Const(if k / d == k % d { 1.0 } else { 0.0 }).into())
        .collect();
    let drift = (0..d).map(|i| Expr::control(i).into()).collect();
    let norm = if d == 1 {
        Expr::unary(UnaryOp::Abs, Expr::state(0))
    } else {
        let sum = (1..d).fold(
            Expr::binary(BinaryOp::Mul, Expr::state(0), Expr::state(0)),
            |acc, i| {
                Expr::binary(
                    BinaryOp::Add,
                    acc,
                    Expr::binary(BinaryOp::Mul, Expr::state(i), Expr::state(i)),
                )
            },
        );
        Expr::unary(UnaryOp::Sqrt, sum)
    };
    Ok(ProblemSpec {
        name: family.to_string(),
        dim: d,
        coefficients: CoefficientField {
            sigma,
            drift,
            running_reward: Expr::Const(0.0).into(),
        },
        terminal: norm.into(),
        obstacle: Some(Expr::param("h_floor", h_floor).into()),
        controls: ControlSet::grid(d, &[-kappa, 0.0, kappa])?,
        horizon,
        growth: GrowthConstants {
            c_f: kappa * (d as f64).sqrt(),
            c_sigma_inv: 1.0,
            c_poly: h_floor.abs().max(1.0),
            p: 1.0,
        },
        domain,
        x0,
        params: BTreeMap::from([
            ("T".to_string(), horizon),
            ("h_floor".to_string(), h_floor),
            ("kappa".to_string(), kappa),
        ]),
        condition_cap: DEFAULT_CONDITION_CAP,
    })
}

/// Sample location of a validation check.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub a: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub description: &'static str,
    pub passed: bool,
    /// Sample with the largest excess of `measured` over `bound`.
    pub worst: Option<SamplePoint>,
    pub measured: f64,
    pub bound: f64,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub samples: usize,
    pub seed: u64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(
                f,
                "  [{}] {:<26} measured {:>12.6e}  bound {:>12.6e}",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.measured,
                c.bound
            )?;
            if let Some(w) = &c.worst {
                write!(f, "  at t={:.4} x={:?}", w.t, w.x)?;
                if let Some(a) = &w.a {
                    write!(f, " a={a:?}")?;
                }
            }
            if !c.passed {
                write!(f, "  ({})", c.description)?;
            }
            if let Some(n) = &c.note {
                write!(f, "  [{n}]")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

const CHECKS: [(&str, &str); 7] = [
    ("sigma_invertible", "sigma finite with condition number below the cap"),
    ("sigma_inverse_bound", "|sigma^-1| <= C_sigma_inv"),
    ("drift_linear_growth", "|f(t,x,a)| <= C_f (1 + |x|)"),
    ("running_reward_growth", "|Gamma(t,x,a)| <= C_poly (1 + |x|^p)"),
    ("terminal_growth", "|g(x)| <= C_poly (1 + |x|^p)"),
    ("obstacle_growth", "|h(t,x)| <= C_poly (1 + |x|^p)"),
    (
        "obstacle_below_terminal",
        "L_T <= g(x): the obstacle at the horizon must not exceed the terminal reward",
    ),
];

struct Observation {
    check: usize,
    measured: f64,
    bound: f64,
    point: SamplePoint,
    note: Option<String>,
}

/// Samples the coefficients and certifies the growth/invertibility
/// assumptions. Failures are reported, never returned as errors.
pub fn validate(spec: &ProblemSpec, samples: usize, seed: u64) -> ValidationReport {
    let d = spec.dim;
    let dom = spec.domain;
    let mut points: Vec<(f64, Vec<f64>)> = Vec::new();
    for corner in 0..(1usize << d) {
        let x: Vec<f64> = (0..d)
            .map(|k| if corner >> k & 1 == 1 { dom.hi } else { dom.lo })
            .collect();
        points.push((0.0, x.clone()));
        points.push((spec.horizon, x));
    }
    let halton = ShiftedHalton::new(d + 1, seed);
    let mut u = vec![0.0; d + 1];
    for i in 0..samples.max(1) {
        halton.point(i as u64, &mut u);
        let t = u[0] * spec.horizon;
        let x = u[1..].iter().map(|v| dom.lo + v * (dom.hi - dom.lo)).collect();
        points.push((t, x));
    }

    let observations: Vec<Vec<Observation>> =
        points.par_iter().map(|(t, x)| observe(spec, *t, x)).collect();

    let mut checks: Vec<CheckResult> = CHECKS
        .iter()
        .map(|(name, description)| CheckResult {
            name,
            description,
            passed: true,
            worst: None,
            measured: f64::NEG_INFINITY,
            bound: 0.0,
            note: None,
        })
        .collect();
    let mut worst_excess = vec![f64::NEG_INFINITY; CHECKS.len()];
    for obs in observations.into_iter().flatten() {
        let tol = 1e-12 * obs.bound.abs().max(1.0);
        let excess = if obs.measured.is_nan() {
            f64::INFINITY
        } else {
            obs.measured - obs.bound
        };
        let c = &mut checks[obs.check];
        if excess > tol || obs.note.is_some() {
            c.passed = false;
        }
        if excess > worst_excess[obs.check] || (obs.note.is_some() && c.note.is_none()) {
            worst_excess[obs.check] = excess;
            c.measured = obs.measured;
            c.bound = obs.bound;
            c.worst = Some(obs.point);
            if obs.note.is_some() {
                c.note = obs.note;
            }
        }
    }
    for c in &mut checks {
        if c.worst.is_none() {
            c.measured = 0.0;
            c.note.get_or_insert_with(|| "not applicable".into());
        }
    }
    ValidationReport {
        checks,
        samples,
        seed,
    }
}

fn observe(spec: &ProblemSpec, t: f64, x: &[f64]) -> Vec<Observation> {
    let d = spec.dim;
    let g = spec.growth;
    let xn = linalg::norm(x);
    let poly = g.c_poly * (1.0 + xn.powf(g.p));
    let lin = g.c_f * (1.0 + xn);
    let at = |a: Option<&[f64]>| SamplePoint {
        t,
        x: x.to_vec(),
        a: a.map(<[f64]>::to_vec),
    };
    let fail = |check: usize, a: Option<&[f64]>, bound: f64, msg: String| Observation {
        check,
        measured: f64::INFINITY,
        bound,
        point: at(a),
        note: Some(msg),
    };
    let mut out = Vec::new();

    let mut sigma = vec![0.0; d * d];
    match spec.sigma_into(t, x, &mut sigma) {
        Ok(()) => {
            let (inv_norm, cond) = linalg::spectral_inverse_norm(&sigma, d);
            out.push(Observation {
                check: 0,
                measured: cond,
                bound: spec.condition_cap,
                point: at(None),
                note: None,
            });
            out.push(Observation {
                check: 1,
                measured: inv_norm,
                bound: g.c_sigma_inv,
                point: at(None),
                note: None,
            });
        }
        Err(e) => {
            out.push(fail(0, None, spec.condition_cap, e.to_string()));
            out.push(fail(1, None, g.c_sigma_inv, e.to_string()));
        }
    }

    let mut f = vec![0.0; d];
    for a in spec.controls.iter() {
        match spec.drift_into(t, x, a, &mut f) {
            Ok(()) => out.push(Observation {
                check: 2,
                measured: linalg::norm(&f),
                bound: lin,
                point: at(Some(a)),
                note: None,
            }),
            Err(e) => out.push(fail(2, Some(a), lin, e.to_string())),
        }
        match spec.running_reward(t, x, a) {
            Ok(v) => out.push(Observation {
                check: 3,
                measured: v.abs(),
                bound: poly,
                point: at(Some(a)),
                note: None,
            }),
            Err(e) => out.push(fail(3, Some(a), poly, e.to_string())),
        }
    }

    let g_val = spec.terminal(x);
    match &g_val {
        Ok(v) => out.push(Observation {
            check: 4,
            measured: v.abs(),
            bound: poly,
            point: SamplePoint {
                t: spec.horizon,
                x: x.to_vec(),
                a: None,
            },
            note: None,
        }),
        Err(e) => out.push(fail(4, None, poly, e.to_string())),
    }
    if spec.has_obstacle() {
        match spec.obstacle(t, x) {
            Ok(v) => out.push(Observation {
                check: 5,
                measured: v.abs(),
                bound: poly,
                point: at(None),
                note: None,
            }),
            Err(e) => out.push(fail(5, None, poly, e.to_string())),
        }
        let point = SamplePoint {
            t: spec.horizon,
            x: x.to_vec(),
            a: None,
        };
        match (spec.obstacle(spec.horizon, x), g_val) {
            (Ok(h), Ok(gv)) => out.push(Observation {
                check: 6,
                measured: h,
                bound: gv,
                point,
                note: None,
            }),
            (Err(e), _) | (_, Err(e)) => out.push(Observation {
                check: 6,
                measured: f64::INFINITY,
                bound: 0.0,
                point,
                note: Some(e.to_string()),
            }),
        }
    }
    out
}

/// φ(t,x,z) = c(1+|x|)|z| + c(1+|x|^p) with c = max(C_f·C_sigma_inv, C_poly).
pub fn dominating_generator(spec: &ProblemSpec, t: f64, x: &[f64], z: &[f64]) -> Result<f64> {
    if !t.is_finite() || x.iter().chain(z).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "dominating generator needs finite inputs".into(),
        ));
    }
    Ok(dominating_value(&spec.growth, linalg::norm(x), linalg::norm(z)))
}

#[inline]
pub(crate) fn dominating_value(growth: &GrowthConstants, x_norm: f64, z_norm: f64) -> f64 {
    let c = growth.dominating_constant();
    c * (1.0 + x_norm) * z_norm + c * (1.0 + x_norm.powf(growth.p))
}

/// Largest |H*(t,x,z)| / φ(t,x,z) ratio over the samples, for diagnostics.
pub fn domination_ratio(
    spec: &ProblemSpec,
    samples: &[(f64, Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    let mut local = LocalHamiltonian::new(spec);
    let mut worst: f64 = 0.0;
    for (t, x, z) in samples {
        local.update(spec, *t, x)?;
        let h = local.sup(z).value;
        worst = worst.max(h.abs() / dominating_generator(spec, *t, x, z)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expression, Scope};

    fn put() -> ProblemSpec {
        build_builtin(
            "bachelier_put",
            &ParamMap::new().with("sigma0", 0.2).with("K", 1).with("T", 1),
        )
        .unwrap()
    }

    #[test]
    fn bachelier_family_has_zero_drift() {
        let spec = put();
        let mut f = [1.0];
        for a in spec.controls.iter() {
            spec.drift_into(0.3, &[0.7], a, &mut f).unwrap();
            assert_eq!(f[0], 0.0);
        }
        assert_eq!(spec.terminal(&[0.7]).unwrap(), 1.0 - 0.7);
    }

    #[test]
    fn controlled_drift_controls() {
        let spec = build_builtin(
            "controlled_drift_abs",
            &ParamMap::new()
                .with("kappa", 1)
                .with("d", 1)
                .with("h_floor", -10)
                .with("T", 1),
        )
        .unwrap();
        assert_eq!(spec.controls.coords(), &[-1.0, 0.0, 1.0]);
        assert_eq!(spec.obstacle(0.2, &[3.0]).unwrap(), -10.0);
        let two = build_builtin(
            "controlled_drift_abs",
            &ParamMap::new()
                .with("kappa", 2)
                .with("d", 2)
                .with("h_floor", -10)
                .with("T", 1),
        )
        .unwrap();
        assert_eq!(two.controls.len(), 9);
        assert_eq!(two.controls.point(0), &[-2.0, -2.0]);
        assert_eq!(two.controls.point(1), &[-2.0, 0.0]);
        assert_eq!(two.terminal(&[3.0, 4.0]).unwrap(), 5.0);
    }

    #[test]
    fn decaying_obstacle_meets_terminal_with_equality() {
        let spec = build_builtin(
            "decaying_obstacle",
            &ParamMap::new()
                .with("beta", 0.5)
                .with("sigma0", 0.2)
                .with("K", 1)
                .with("T", 1),
        )
        .unwrap();
        for x in [-1.0, 0.3, 1.0, 2.5] {
            assert_eq!(spec.obstacle(1.0, &[x]).unwrap(), spec.terminal(&[x]).unwrap());
        }
        assert_eq!(spec.obstacle(0.0, &[0.0]).unwrap(), 1.5);
        let report = validate(&spec, 2000, 3);
        assert!(report.passed(), "{report}");
        assert!(report.check("obstacle_below_terminal").unwrap().passed);
    }

    #[test]
    fn builtin_is_deterministic() {
        assert_eq!(put(), put());
    }

    #[test]
    fn builtin_errors() {
        assert!(matches!(
            build_builtin("heston", &ParamMap::new()),
            Err(Error::UnknownBuiltin(_))
        ));
        assert!(matches!(
            build_builtin("bachelier_put", &ParamMap::new().with("K", 1).with("T", 1)),
            Err(Error::MissingParam { .. })
        ));
        assert!(matches!(
            build_builtin(
                "bachelier_put",
                &ParamMap::new().with("sigma0", -1).with("K", 1).with("T", 1)
            ),
            Err(Error::InvalidParam { .. })
        ));
        assert!(matches!(
            build_builtin(
                "bachelier_put",
                &ParamMap::new().with("sigma0", 1).with("K", 1).with("T", 1).with("kappa", 2)
            ),
            Err(Error::InvalidParam { .. })
        ));
        assert!(matches!(
            build_builtin(
                "controlled_drift_abs",
                &ParamMap::new().with("kappa", 1).with("d", 6).with("h_floor", 0).with("T", 1)
            ),
            Err(Error::InvalidParam { .. })
        ));
    }

    #[test]
    fn validation_of_put_passes_and_is_deterministic() {
        let spec = put();
        let r1 = validate(&spec, 10_000, 7);
        assert!(r1.passed(), "{r1}");
        assert_eq!(r1, validate(&spec, 10_000, 7));
        let names: std::collections::HashSet<_> = r1.checks.iter().map(|c| c.name).collect();
        assert_eq!(names.len(), r1.checks.len());
    }

    fn with_expr(spec: &ProblemSpec, text: &str, control_dim: usize) -> ScalarFn {
        let scope = Scope {
            state_dim: spec.dim,
            control_dim,
            params: &spec.params,
        };
        parse_expression(text, &scope).unwrap().into()
    }

    #[test]
    fn singular_sigma_is_reported_near_zero() {
        let mut spec = put();
        spec.coefficients.sigma = vec![with_expr(&spec, "x1", 0)];
        let r = validate(&spec, 4000, 1);
        let c = r.check("sigma_inverse_bound").unwrap();
        assert!(!c.passed);
        let x = c.worst.as_ref().unwrap().x[0];
        assert!(x.abs() < 0.05, "worst sample at {x}");
    }

    #[test]
    fn quadratic_drift_breaks_linear_growth_at_the_edge() {
        let mut spec = put();
        spec.coefficients.drift = vec![with_expr(&spec, "x1 * x1", 1)];
        let r = validate(&spec, 1000, 1);
        let c = r.check("drift_linear_growth").unwrap();
        assert!(!c.passed);
        assert_eq!(c.worst.as_ref().unwrap().x[0], spec.domain.hi);
    }

    #[test]
    fn non_finite_coefficient_fails_its_check() {
        let mut spec = put();
        spec.coefficients.running_reward = with_expr(&spec, "1 / x1", 1);
        spec.domain = Domain::new(-1.0, 1.0).unwrap();
        // Hit x = 0 exactly through the corner-free Halton samples is unlikely;
        // sqrt of negative values is certain on half the box.
        spec.coefficients.running_reward = with_expr(&spec, "sqrt(x1)", 1);
        let r = validate(&spec, 100, 1);
        let c = r.check("running_reward_growth").unwrap();
        assert!(!c.passed);
        assert!(c.note.is_some());
    }

    #[test]
    fn obstacle_above_terminal_fails() {
        let spec = put();
        let bad = spec.clone().with_terminal(with_expr(&spec, "max(K - x1, 0) - 0.01", 0));
        let r = validate(&bad, 500, 2);
        assert!(!r.check("obstacle_below_terminal").unwrap().passed);
        assert!(r.to_string().contains("L_T <= g(x)"));
    }

    #[test]
    fn dominating_generator_direct_substitution() {
        let mut spec = put();
        spec.growth = GrowthConstants {
            c_f: 1.0,
            c_sigma_inv: 1.0,
            c_poly: 1.0,
            p: 2.0,
        };
        assert_eq!(dominating_generator(&spec, 0.0, &[0.0], &[0.0]).unwrap(), 1.0);
        spec.growth.p = 1.0;
        assert_eq!(dominating_generator(&spec, 0.0, &[1.0], &[-1.0]).unwrap(), 4.0);
        assert!(dominating_generator(&spec, 0.0, &[f64::NAN], &[0.0]).is_err());
    }
}
