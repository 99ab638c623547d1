//! Line-oriented problem files.
//!
//! ```text
//! # at-the-money put
//! [problem] name=bachelier_put dim=1 T=1 x0=1
//! [params]  K=1 sigma0=0.2
//! [controls] dim=1 points=0
//! [sigma]   expr="sigma0"
//! [f]       expr="0"
//! [gamma]   expr="0"
//! [g]       expr="max(K - x1, 0)"
//! [h]       expr="max(K - x1, 0)"
//! [growth]  C_f=1 C_sigma_inv=5 C_poly=1 p=1
//! [domain]  lo=-3 hi=5 boundary=neumann
//! ```
//!
//! A section header may share its line with `key=value` pairs or be
//! followed by them on later lines. Values containing spaces must be quoted,
//! except for `expr` and `points`, which take the rest of the line. `#`
//! starts a comment. `sigma` lists the d×d entries row-major and `f` the d
//! drift components, both comma-separated. `[gamma]` defaults to 0 and a
//! missing `[h]` means there is no obstacle. The horizon `T` is available to
//! every expression as a parameter.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::expr::{is_reserved, parse_expression, parse_expression_list, Expr, ParseError, Scope};
use crate::problem::{
    parse_number, validate, CoefficientField, ControlSet, Domain, GrowthConstants, ParamMap,
    ProblemSpec, ScalarFn, DEFAULT_CONDITION_CAP, MAX_DIM,
};

/// Samples used by the validation that guards every parsed file.
pub const FILE_VALIDATION_SAMPLES: usize = 4096;
pub const FILE_VALIDATION_SEED: u64 = 0;

const SECTIONS: [(&str, &[&str]); 10] = [
    ("problem", &["name", "dim", "T", "x0", "condition_cap"]),
    ("params", &[]),
    ("controls", &["dim", "points"]),
    ("sigma", &["expr"]),
    ("f", &["expr"]),
    ("gamma", &["expr"]),
    ("g", &["expr"]),
    ("h", &["expr"]),
    ("growth", &["C_f", "C_sigma_inv", "C_poly", "p"]),
    ("domain", &["lo", "hi", "boundary"]),
];

type Raw = BTreeMap<String, BTreeMap<String, (usize, String)>>;

fn file_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse(ParseError::File {
        line,
        message: message.into(),
    })
}

/// Parses and validates a problem file.
pub fn parse_problem_file(text: &str) -> Result<ProblemSpec> {
    let spec = from_raw(&read_sections(text)?)?;
    let report = validate(&spec, FILE_VALIDATION_SAMPLES, FILE_VALIDATION_SEED);
    if !report.passed() {
        return Err(Error::Validation(Box::new(report)));
    }
    Ok(spec)
}

fn read_sections(text: &str) -> Result<Raw> {
    let mut raw = Raw::new();
    let mut current: Option<String> = None;
    for (idx, full) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut rest = strip_comment(full).trim();
        if rest.starts_with('[') {
            let close = rest
                .find(']')
                .ok_or_else(|| file_err(line_no, "unterminated section header"))?;
            let name = rest[1..close].trim().to_string();
            if !SECTIONS.iter().any(|(s, _)| *s == name) {
                return Err(file_err(line_no, format!("unknown section [{name}]")));
            }
            if raw.contains_key(&name) {
                return Err(file_err(line_no, format!("duplicate section [{name}]")));
            }
            raw.insert(name.clone(), BTreeMap::new());
            current = Some(name);
            rest = rest[close + 1..].trim();
        }
        if rest.is_empty() {
            continue;
        }
        let section = current
            .as_ref()
            .ok_or_else(|| file_err(line_no, "key=value outside of a section"))?;
        let entries = raw.get_mut(section).expect("section registered");
        for (key, value) in split_pairs(rest).map_err(|m| file_err(line_no, m))? {
            let allowed = SECTIONS.iter().find(|(s, _)| s == section).unwrap().1;
            if section != "params" && !allowed.contains(&key.as_str()) {
                return Err(file_err(line_no, format!("unknown key `{key}` in [{section}]")));
            }
            if entries.insert(key.clone(), (line_no, value)).is_some() {
                return Err(file_err(line_no, format!("duplicate key `{key}` in [{section}]")));
            }
        }
    }
    Ok(raw)
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn split_pairs(mut s: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    while !s.is_empty() {
        let eq = s.find('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
        let key = s[..eq].trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(format!("malformed key `{key}`"));
        }
        s = s[eq + 1..].trim_start();
        let value;
        if let Some(body) = s.strip_prefix('"') {
            let close = body.find('"').ok_or("unterminated quoted value")?;
            value = body[..close].to_string();
            s = body[close + 1..].trim_start();
        } else if key == "expr" || key == "points" {
            value = s.trim().to_string();
            s = "";
        } else {
            let end = s.find(char::is_whitespace).unwrap_or(s.len());
            value = s[..end].to_string();
            s = s[end..].trim_start();
        }
        out.push((key.to_string(), value));
    }
    Ok(out)
}

struct Sections<'a>(&'a Raw);

impl Sections<'_> {
    fn section(&self, name: &str) -> Result<&BTreeMap<String, (usize, String)>> {
        self.0
            .get(name)
            .ok_or_else(|| file_err(0, format!("missing section [{name}]")))
    }

    fn get(&self, section: &str, key: &str) -> Result<(usize, &str)> {
        self.try_get(section, key)?
            .ok_or_else(|| file_err(0, format!("missing key `{key}` in [{section}]")))
    }

    fn try_get(&self, section: &str, key: &str) -> Result<Option<(usize, &str)>> {
        Ok(self
            .section(section)?
            .get(key)
            .map(|(l, v)| (*l, v.as_str())))
    }

    fn number(&self, section: &str, key: &str) -> Result<f64> {
        let (line, raw) = self.get(section, key)?;
        parse_number(key, raw).map_err(|e| file_err(line, e.to_string()))
    }

    fn number_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.try_get(section, key)? {
            Some((line, raw)) => parse_number(key, raw).map_err(|e| file_err(line, e.to_string())),
            None => Ok(default),
        }
    }
}

fn numbers(line: usize, key: &str, raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|v| parse_number(key, v).map_err(|e| file_err(line, e.to_string())))
        .collect()
}

fn from_raw(raw: &Raw) -> Result<ProblemSpec> {
    let s = Sections(raw);
    let dim_f = s.number("problem", "dim")?;
    if dim_f.fract() != 0.0 || !(1.0..=MAX_DIM as f64).contains(&dim_f) {
        return Err(Error::Dimension {
            what: "problem file",
            dim: dim_f.max(0.0) as usize,
            allowed: "1..=5",
        });
    }
    let dim = dim_f as usize;
    let horizon = s.number("problem", "T")?;
    let name = s
        .try_get("problem", "name")?
        .map_or("custom".to_string(), |(_, v)| v.to_string());

    let mut params = BTreeMap::new();
    if let Ok(section) = s.section("params") {
        for (key, (line, value)) in section {
            if is_reserved(key) || key == "T" {
                return Err(file_err(*line, format!("parameter name `{key}` is reserved")));
            }
            params.insert(key.clone(), parse_number(key, value).map_err(|e| file_err(*line, e.to_string()))?);
        }
    }
    params.insert("T".to_string(), horizon);

    let control_dim_f = s.number("controls", "dim")?;
    if control_dim_f.fract() != 0.0 || control_dim_f < 1.0 {
        return Err(file_err(0, "[controls] dim must be a positive integer"));
    }
    let (line, points) = s.get("controls", "points")?;
    let controls = ControlSet::new(control_dim_f as usize, numbers(line, "points", points)?)
        .map_err(|e| file_err(line, e.to_string()))?;

    let fixed = Scope {
        state_dim: dim,
        control_dim: 0,
        params: &params,
    };
    let controlled = Scope {
        control_dim: controls.dim(),
        ..fixed
    };
    let list = |section: &str, scope: &Scope<'_>, len: usize| -> Result<Vec<ScalarFn>> {
        let (line, text) = s.get(section, "expr")?;
        let exprs = parse_expression_list(text, scope)?;
        if exprs.len() != len {
            return Err(file_err(
                line,
                format!("[{section}] needs {len} comma-separated entries, got {}", exprs.len()),
            ));
        }
        Ok(exprs.into_iter().map(ScalarFn::Expr).collect())
    };
    let single = |section: &str, scope: &Scope<'_>| -> Result<ScalarFn> {
        let (_, text) = s.get(section, "expr")?;
        Ok(parse_expression(text, scope)?.into())
    };

    let sigma = list("sigma", &fixed, dim * dim)?;
    let drift = list("f", &controlled, dim)?;
    let running_reward = if raw.contains_key("gamma") {
        single("gamma", &controlled)?
    } else {
        Expr::Const(0.0).into()
    };
    let terminal = single("g", &fixed)?;
    let obstacle = if raw.contains_key("h") {
        Some(single("h", &fixed)?)
    } else {
        None
    };

    let growth = GrowthConstants {
        c_f: s.number("growth", "C_f")?,
        c_sigma_inv: s.number("growth", "C_sigma_inv")?,
        c_poly: s.number("growth", "C_poly")?,
        p: s.number("growth", "p")?,
    };
    let domain = Domain::new(s.number("domain", "lo")?, s.number("domain", "hi")?)?;
    if let Some((line, b)) = s.try_get("domain", "boundary")? {
        if b != "neumann" {
            return Err(file_err(line, format!("unsupported boundary `{b}` (expected neumann)")));
        }
    }
    let x0 = match s.try_get("problem", "x0")? {
        Some((line, v)) => numbers(line, "x0", v)?,
        None => vec![0.5 * (domain.lo + domain.hi); dim],
    };
    let spec = ProblemSpec {
        name,
        dim,
        coefficients: CoefficientField {
            sigma,
            drift,
            running_reward,
        },
        terminal,
        obstacle,
        controls,
        horizon,
        growth,
        domain,
        x0,
        params,
        condition_cap: s.number_or("problem", "condition_cap", DEFAULT_CONDITION_CAP)?,
    };
    spec.check_structure()?;
    Ok(spec)
}

/// Assembles a `custom` builtin from string parameters.
///
/// Keys: `dim`, `T`, `x0`, `control_dim` (default 1), `controls` (flat
/// point list), `sigma`, `f`, `gamma`, `g`, `h`, `C_f`, `C_sigma_inv`,
/// `C_poly`, `p`, `lo`, `hi`. Any other key is a named numeric parameter.
pub fn custom_from_params(params: &ParamMap) -> Result<ProblemSpec> {
    let mapping: [(&str, &str, &str); 16] = [
        ("dim", "problem", "dim"),
        ("T", "problem", "T"),
        ("x0", "problem", "x0"),
        ("condition_cap", "problem", "condition_cap"),
        ("control_dim", "controls", "dim"),
        ("controls", "controls", "points"),
        ("sigma", "sigma", "expr"),
        ("f", "f", "expr"),
        ("gamma", "gamma", "expr"),
        ("g", "g", "expr"),
        ("h", "h", "expr"),
        ("C_f", "growth", "C_f"),
        ("C_sigma_inv", "growth", "C_sigma_inv"),
        ("C_poly", "growth", "C_poly"),
        ("p", "growth", "p"),
        ("lo", "domain", "lo"),
    ];
    let mut raw = Raw::new();
    for section in ["problem", "params", "controls", "growth", "domain"] {
        raw.insert(section.to_string(), BTreeMap::new());
    }
    raw.get_mut("problem")
        .unwrap()
        .insert("name".into(), (0, "custom".into()));
    raw.get_mut("controls")
        .unwrap()
        .insert("dim".into(), (0, "1".into()));
    for (key, value) in params.iter() {
        let target = mapping
            .iter()
            .find(|(k, _, _)| *k == key)
            .map(|(_, s, k)| (*s, *k))
            .or((key == "hi").then_some(("domain", "hi")));
        let (section, field) = target.unwrap_or(("params", key));
        raw.entry(section.to_string())
            .or_default()
            .insert(field.to_string(), (0, value.to_string()));
    }
    let spec = from_raw(&raw).map_err(|e| match e {
        Error::Parse(ParseError::File { message, .. }) if message.starts_with("missing") => {
            Error::MissingParam {
                family: "custom".into(),
                key: message,
            }
        }
        other => other,
    })?;
    let report = validate(&spec, FILE_VALIDATION_SAMPLES, FILE_VALIDATION_SEED);
    if !report.passed() {
        return Err(Error::Validation(Box::new(report)));
    }
    Ok(spec)
}

/// Writes a spec in the problem-file format. Native coefficients cannot be
/// written and yield an error.
pub fn emit(spec: &ProblemSpec) -> Result<String> {
    let expr = |f: &ScalarFn| -> Result<String> {
        match f {
            ScalarFn::Expr(e) => Ok(e.to_string()),
            ScalarFn::Native(n) => Err(Error::InvalidArgument(format!(
                "native coefficient `{}` cannot be written to a problem file",
                n.name
            ))),
        }
    };
    let list = |fs: &[ScalarFn]| -> Result<String> {
        Ok(fs.iter().map(expr).collect::<Result<Vec<_>>>()?.join(", "))
    };
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");

    let mut out = String::new();
    let _ = writeln!(
        out,
        "[problem]\nname = \"{}\"\ndim = {}\nT = {}\nx0 = {}",
        spec.name,
        spec.dim,
        spec.horizon,
        join(&spec.x0)
    );
    if spec.condition_cap != DEFAULT_CONDITION_CAP {
        let _ = writeln!(out, "condition_cap = {}", spec.condition_cap);
    }
    out.push_str("\n[params]\n");
    for (k, v) in spec.params.iter().filter(|(k, _)| k.as_str() != "T") {
        let _ = writeln!(out, "{k} = {v}");
    }
    let _ = writeln!(
        out,
        "\n[controls]\ndim = {}\npoints = {}",
        spec.controls.dim(),
        join(spec.controls.coords())
    );
    let _ = writeln!(out, "\n[sigma]\nexpr = \"{}\"", list(&spec.coefficients.sigma)?);
    let _ = writeln!(out, "\n[f]\nexpr = \"{}\"", list(&spec.coefficients.drift)?);
    let _ = writeln!(out, "\n[gamma]\nexpr = \"{}\"", expr(&spec.coefficients.running_reward)?);
    let _ = writeln!(out, "\n[g]\nexpr = \"{}\"", expr(&spec.terminal)?);
    if let Some(h) = &spec.obstacle {
        let _ = writeln!(out, "\n[h]\nexpr = \"{}\"", expr(h)?);
    }
    let g = spec.growth;
    let _ = writeln!(
        out,
        "\n[growth]\nC_f = {}\nC_sigma_inv = {}\nC_poly = {}\np = {}",
        g.c_f, g.c_sigma_inv, g.c_poly, g.p
    );
    let _ = writeln!(
        out,
        "\n[domain]\nlo = {}\nhi = {}\nboundary = neumann",
        spec.domain.lo, spec.domain.hi
    );
    Ok(out)
}
