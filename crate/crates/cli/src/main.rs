use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ctlstop_core::hjb::{convergence_study, ladder, DEFAULT_CORE_FRACTION, DEFAULT_STOP_TOLERANCE};
use ctlstop_core::rbsde::{skorokhod_residual, truncation_ladder_mc};
use ctlstop_core::strategy::default_challengers;
use ctlstop_core::verify::{bachelier_atm_put, print_table, ProblemCheckConfig};
use ctlstop_core::{
    build_builtin, extract_policy, optimality_gap, parse_problem_file, run_acceptance, simulate_controlled,
    simulate_uncontrolled, solve, solve_rbsde_with, solve_with, verify_problem, ControlSet, Error, Generator,
    ParamMap, ProblemSpec, RegressionBasis, RegressionOptions, SpaceTimeGrid, SuiteConfig, TimeGrid,
    TruncationIndex, ValueField, ZEstimator,
};

#[derive(Parser)]
#[command(name = "ctlstop", version, about = "Finite-horizon stochastic control-and-stopping solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference solve; writes the value field and the extracted policy.
    SolvePde(SolvePde),
    /// Regression Monte-Carlo solve of the reflected BSDE.
    SolveMc(SolveMc),
    /// Forward-simulates the extracted policy against the default challengers.
    Simulate(Simulate),
    /// Monotonicity of the truncated solves in n and m, PDE and Monte-Carlo.
    Ladder(Ladder),
    /// Acceptance suite, or the check table of one problem.
    Verify(Verify),
    /// Refinement study of the finite-difference value at x0.
    Convergence(Convergence),
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// Problem file.
    #[arg(long, conflicts_with = "builtin")]
    problem: Option<PathBuf>,
    /// Builtin family: bachelier_put, controlled_drift_abs, decaying_obstacle, custom.
    #[arg(long)]
    builtin: Option<String>,
    /// Builtin parameter, key=value; repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// Overrides the initial state, comma-separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    x0: Option<Vec<f64>>,
}

#[derive(Args)]
struct PdeArgs {
    /// Nodes per axis.
    #[arg(long, default_value_t = 401)]
    nx: usize,
    /// Time steps; derived from the CFL bound when omitted.
    #[arg(long)]
    nt: Option<usize>,
    /// Stop where the obstacle exceeds the continuation value by more than this.
    #[arg(long, default_value_t = DEFAULT_STOP_TOLERANCE)]
    eps_stop: f64,
}

#[derive(Args)]
struct McArgs {
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SolvePde {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    pde: PdeArgs,
    /// Solve H̄*ⁿ'ᵐ instead of H*, given as n,m.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    truncate: Option<Vec<u32>>,
    /// Replace H* by the dominating generator.
    #[arg(long, conflicts_with = "truncate")]
    dominating: bool,
    /// Number of time slices written, evenly spaced; 0 writes all.
    #[arg(long, default_value_t = 11)]
    slices: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisKind {
    Local,
    Poly,
}

#[derive(Clone, Copy, ValueEnum)]
enum ZKind {
    Joint,
    Increment,
}

#[derive(Args)]
struct SolveMc {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    mc: McArgs,
    #[arg(long, value_enum, default_value = "local")]
    basis: BasisKind,
    /// Cells per axis of the local basis.
    #[arg(long, default_value_t = 16)]
    cells: usize,
    /// Local degree, or total degree of the polynomial basis.
    #[arg(long, default_value_t = 1)]
    degree: usize,
    #[arg(long, value_enum, default_value = "joint")]
    z_estimator: ZKind,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    truncate: Option<Vec<u32>>,
    #[arg(long, conflicts_with = "truncate")]
    dominating: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Simulate {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    pde: PdeArgs,
    #[command(flatten)]
    mc: McArgs,
    /// Also write the paths of the policy-controlled batch.
    #[arg(long)]
    write_paths: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Ladder {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 201)]
    nx: usize,
    #[arg(long = "n-list", alias = "n", value_delimiter = ',', default_value = "1,2,4")]
    n_list: Vec<u32>,
    #[arg(long = "m-list", alias = "m", value_delimiter = ',', default_value = "1,2,4")]
    m_list: Vec<u32>,
    #[arg(long, default_value_t = 50_000)]
    paths: usize,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_CORE_FRACTION)]
    core_fraction: f64,
    /// Skip the Monte-Carlo ladder.
    #[arg(long)]
    pde_only: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Verify {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_STOP_TOLERANCE)]
    eps_stop: f64,
    #[arg(long, default_value_t = DEFAULT_CORE_FRACTION)]
    core_fraction: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Convergence {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long = "nx-list", value_delimiter = ',', default_value = "101,201,401")]
    nx_list: Vec<usize>,
    /// Exact value at x0; the closed form is used for an at-the-money bachelier_put.
    #[arg(long)]
    reference: Option<f64>,
    /// Midpoint refinements of a one-dimensional control set, solved at the finest nx.
    #[arg(long, default_value_t = 0)]
    control_refinements: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failures carry their exit status.
enum Failure {
    Check(String),
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(
                Error::NonFinite { .. }
                | Error::NotMonotone(_)
                | Error::SingularRegression { .. }
                | Error::SingularSigma { .. },
            ) => Failure::Runtime(e),
            _ => Failure::Input(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from(anyhow::Error::from(e))
    }
}

type Outcome = Result<(), Failure>;

fn load(args: &ProblemArgs) -> anyhow::Result<ProblemSpec> {
    let spec = match (&args.problem, &args.builtin) {
        (Some(path), _) => {
            if !args.params.is_empty() {
                bail!("--param applies to --builtin only");
            }
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_problem_file(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Some(name)) => {
            let mut params = ParamMap::new();
            for pair in &args.params {
                params.parse_pair(pair)?;
            }
            build_builtin(name, &params)?
        }
        (None, None) => bail!("one of --problem or --builtin is required"),
    };
    match &args.x0 {
        Some(x0) => {
            let spec = spec.with_x0(x0.clone());
            spec.check_structure()?;
            if !spec.domain.contains(&spec.x0) {
                bail!("x0 {:?} lies outside the domain [{}, {}]", spec.x0, spec.domain.lo, spec.domain.hi);
            }
            Ok(spec)
        }
        None => Ok(spec),
    }
}

fn has_problem(args: &ProblemArgs) -> bool {
    args.problem.is_some() || args.builtin.is_some()
}

fn truncation(arg: &Option<Vec<u32>>, dominating: bool) -> anyhow::Result<Generator> {
    Ok(match arg {
        Some(v) => Generator::Truncated(TruncationIndex::new(v[0], v[1])?),
        None if dominating => Generator::Dominating,
        None => Generator::Sup,
    })
}

fn out_file(dir: &Option<PathBuf>, name: &str) -> anyhow::Result<Option<BufWriter<File>>> {
    let Some(dir) = dir else { return Ok(None) };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path: PathBuf = Path::new(dir).join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(Some(BufWriter::new(f)))
}

fn pde_grid(spec: &ProblemSpec, nx: usize, nt: Option<usize>, generator: Generator) -> anyhow::Result<SpaceTimeGrid> {
    Ok(match nt {
        Some(nt) => SpaceTimeGrid::new(spec.dim, spec.domain.lo, spec.domain.hi, nx, 0.0, spec.horizon, nt)?,
        None => SpaceTimeGrid::with_cfl(spec, nx, generator)?,
    })
}

fn slice_list(nt: usize, count: usize) -> Vec<usize> {
    if count == 0 || count > nt {
        return (0..=nt).collect();
    }
    let mut out: Vec<usize> = (0..count)
        .map(|i| ((i as f64) * nt as f64 / (count - 1).max(1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

fn solve_pde(cmd: SolvePde) -> Outcome {
    let spec = load(&cmd.problem)?;
    let generator = truncation(&cmd.truncate, cmd.dominating)?;
    let grid = pde_grid(&spec, cmd.pde.nx, cmd.pde.nt, generator)?;
    let start = Instant::now();
    let field = solve_with(&spec, &grid, generator)?;
    let elapsed = start.elapsed();
    let policy = extract_policy(&spec, &field, cmd.pde.eps_stop)?;
    let value = field.value_at(grid.t0, &spec.x0);
    println!("problem {} d={} nx={} nt={} cfl={:.4}", spec.name, spec.dim, grid.nx, grid.nt, field.meta.cfl_ratio);
    println!("y(t0,x0) = {value:.10} at x0 = {:?}", spec.x0);
    eprintln!("solved in {:.3}s", elapsed.as_secs_f64());
    if let Some(w) = out_file(&cmd.out, "value_field.csv")? {
        field.write_csv(Some(&policy), &slice_list(grid.nt, cmd.slices), w)?;
    }
    if let Some(w) = out_file(&cmd.out, "pde_summary.csv")? {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["problem", "nx", "nt", "cfl_ratio", "t0", "x0", "value"])
            .map_err(anyhow::Error::from)?;
        let x0 = spec.x0.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        w.write_record([
            spec.name.clone(),
            grid.nx.to_string(),
            grid.nt.to_string(),
            field.meta.cfl_ratio.to_string(),
            grid.t0.to_string(),
            x0,
            value.to_string(),
        ])
        .map_err(anyhow::Error::from)?;
        w.flush().map_err(anyhow::Error::from)?;
    }
    Ok(())
}

fn solve_mc(cmd: SolveMc) -> Outcome {
    let spec = load(&cmd.problem)?;
    let generator = truncation(&cmd.truncate, cmd.dominating)?;
    let basis = match cmd.basis {
        BasisKind::Local => RegressionBasis::LocalPartition {
            cells_per_axis: cmd.cells,
            local_degree: cmd.degree,
        },
        BasisKind::Poly => RegressionBasis::Polynomial { degree: cmd.degree },
    };
    let opts = RegressionOptions {
        basis,
        z_estimator: match cmd.z_estimator {
            ZKind::Joint => ZEstimator::Joint,
            ZKind::Increment => ZEstimator::Increment,
        },
        ..RegressionOptions::default()
    };
    let grid = TimeGrid::new(0.0, spec.horizon, cmd.mc.steps)?;
    let start = Instant::now();
    let batch = simulate_uncontrolled(&spec, 0.0, &spec.x0, grid, cmd.mc.paths, cmd.mc.seed)?;
    let r = solve_rbsde_with(&spec, &batch, &opts, generator)?;
    let d = &r.diagnostics;
    println!("problem {} d={} paths={} steps={}", spec.name, spec.dim, r.count, grid.steps);
    println!("y0 = {:.10} ± {:.10}", r.y0, r.y0_stderr);
    println!(
        "Skorokhod residual {:e}, max regression condition {:.3e}, fallback cells {}",
        skorokhod_residual(&r),
        d.condition.iter().copied().fold(0.0, f64::max),
        d.fallbacks.iter().sum::<usize>()
    );
    eprintln!("solved in {:.3}s", start.elapsed().as_secs_f64());
    if let Some(w) = out_file(&cmd.out, "backward_summary.csv")? {
        r.write_csv(w)?;
    }
    Ok(())
}

fn policy_for(spec: &ProblemSpec, pde: &PdeArgs) -> anyhow::Result<(ValueField, ctlstop_core::PolicyField)> {
    let grid = pde_grid(spec, pde.nx, pde.nt, Generator::Sup)?;
    let field = solve(spec, &grid, None)?;
    let policy = extract_policy(spec, &field, pde.eps_stop)?;
    Ok((field, policy))
}

fn simulate(cmd: Simulate) -> Outcome {
    let spec = load(&cmd.problem)?;
    let (field, policy) = policy_for(&spec, &cmd.pde)?;
    let grid = TimeGrid::new(0.0, spec.horizon, cmd.mc.steps)?;
    let challengers = default_challengers(&spec, &policy);
    let report = optimality_gap(&spec, &field, &policy, &challengers, grid, cmd.mc.paths, cmd.mc.seed, 0.0)?;
    let o = &report.optimal;
    let width = report.challengers.iter().map(|c| c.name.len()).max().unwrap_or(0).max(20) + 2;
    println!("{:<width$}{:.6}", "pde value at x0", report.field_value);
    println!(
        "{:<width$}{:.6} ± {:.6}  (running {:.6}, obstacle {:.6}, terminal {:.6}, stopped early {:.2}%)",
        "policy payoff",
        o.mean,
        o.stderr,
        o.breakdown.running,
        o.breakdown.obstacle,
        o.breakdown.terminal,
        100.0 * o.breakdown.fraction_stopped_early
    );
    for c in &report.challengers {
        println!(
            "{:<width$}{:.6} ± {:.6}  {}",
            c.name,
            c.estimate.mean,
            c.estimate.stderr,
            if c.passed { "below policy + 2 SE" } else { "ABOVE policy + 2 SE" }
        );
    }
    if let Some(w) = out_file(&cmd.out, "strategies.csv")? {
        report.write_csv(w)?;
    }
    if cmd.write_paths {
        if let Some(w) = out_file(&cmd.out, "paths.csv")? {
            simulate_controlled(&spec, &policy, 0.0, &spec.x0, grid, cmd.mc.paths, cmd.mc.seed)?.write_csv(&spec, w)?;
        }
    }
    Ok(())
}

fn run_ladder(cmd: Ladder) -> Outcome {
    let spec = load(&cmd.problem)?;
    if spec.dim > 2 && !cmd.pde_only {
        eprintln!("d={} has no finite-difference solver; running the Monte-Carlo ladder only", spec.dim);
    }
    let mut failures = Vec::new();
    if spec.dim <= 2 {
        let grid = SpaceTimeGrid::with_cfl(&spec, cmd.nx, Generator::Sup)?;
        let r = ladder(&spec, &grid, &cmd.n_list, &cmd.m_list, cmd.core_fraction)?;
        println!("pde ladder at x0 (untruncated {:.6}):", r.reference_at_x0);
        for e in &r.entries {
            println!("  n={} m={}  value {:.6}  core gap {:.3e}", e.index.n, e.index.m, e.value_at_x0, e.core_gap);
        }
        println!(
            "  max violation: n {:.3e}, m {:.3e} over {} comparisons",
            r.n_violation, r.m_violation, r.comparisons
        );
        if r.max_violation() > 1e-10 {
            failures.push(format!("pde ladder violation {:.3e}", r.max_violation()));
        }
        if let Some(mut w) = out_file(&cmd.out, "ladder_pde.csv")?.map(csv::Writer::from_writer) {
            w.write_record(["n", "m", "value_at_x0", "core_gap"]).map_err(anyhow::Error::from)?;
            for e in &r.entries {
                w.write_record([e.index.n.to_string(), e.index.m.to_string(), e.value_at_x0.to_string(), e.core_gap.to_string()])
                    .map_err(anyhow::Error::from)?;
            }
            w.flush().map_err(anyhow::Error::from)?;
        }
    } else if cmd.pde_only {
        return Err(Error::Dimension {
            what: "finite-difference ladder",
            dim: spec.dim,
            allowed: "1 or 2",
        }
        .into());
    }
    if !cmd.pde_only {
        let grid = TimeGrid::new(0.0, spec.horizon, cmd.steps)?;
        let batch = simulate_uncontrolled(&spec, 0.0, &spec.x0, grid, cmd.paths, cmd.seed)?;
        let r = truncation_ladder_mc(&spec, &batch, &RegressionOptions::default(), &cmd.n_list, &cmd.m_list)?;
        println!("mc ladder (untruncated y0 {:.6}):", r.reference_y0);
        for e in &r.entries {
            println!("  n={} m={}  y0 {:.6} ± {:.6}", e.index.n, e.index.m, e.y0, e.stderr);
        }
        println!(
            "  worst paired ratio: n {:.2} SE, m {:.2} SE; {} violations above 2 SE",
            r.worst_n_ratio, r.worst_m_ratio, r.violations
        );
        if r.violations > 0 {
            failures.push(format!("{} mc ladder violations", r.violations));
        }
        if let Some(mut w) = out_file(&cmd.out, "ladder_mc.csv")?.map(csv::Writer::from_writer) {
            w.write_record(["n", "m", "y0", "stderr"]).map_err(anyhow::Error::from)?;
            for e in &r.entries {
                w.write_record([e.index.n.to_string(), e.index.m.to_string(), e.y0.to_string(), e.stderr.to_string()])
                    .map_err(anyhow::Error::from)?;
            }
            w.flush().map_err(anyhow::Error::from)?;
        }
    }
    if failures.is_empty() {
        println!("0 monotonicity violations");
        Ok(())
    } else {
        Err(Failure::Check(failures.join("; ")))
    }
}

fn run_verify(cmd: Verify) -> Outcome {
    let lines = if has_problem(&cmd.problem) {
        let spec = load(&cmd.problem)?;
        let d = ProblemCheckConfig::default();
        let cfg = ProblemCheckConfig {
            nx: cmd.nx.unwrap_or(d.nx),
            paths: cmd.paths.unwrap_or(d.paths),
            steps: cmd.steps.unwrap_or(d.steps),
            seed: cmd.seed.unwrap_or(d.seed),
            eps_stop: cmd.eps_stop,
            core_fraction: cmd.core_fraction,
        };
        println!("checks for {} (d={})", spec.name, spec.dim);
        verify_problem(&spec, &cfg)
    } else {
        let d = SuiteConfig::default();
        let cfg = SuiteConfig {
            nx: cmd.nx.unwrap_or(d.nx),
            paths: cmd.paths.unwrap_or(d.paths),
            steps: cmd.steps.unwrap_or(d.steps),
            seed: cmd.seed.unwrap_or(d.seed),
            ..d
        };
        println!("acceptance suite");
        run_acceptance(cfg)
    };
    print!("{}", print_table(&lines));
    if let Some(mut w) = out_file(&cmd.out, "verify.csv")?.map(csv::Writer::from_writer) {
        w.write_record(["id", "check", "passed", "detail"]).map_err(anyhow::Error::from)?;
        for l in &lines {
            w.write_record([l.id.as_str(), l.name.as_str(), if l.passed { "1" } else { "0" }, l.detail.as_str()])
                .map_err(anyhow::Error::from)?;
        }
        w.flush().map_err(anyhow::Error::from)?;
    }
    let failed = lines.iter().filter(|l| !l.passed).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Check(format!("{failed} checks failed")))
    }
}

/// Inserts the midpoint between each pair of neighbouring control values.
fn refine_controls(set: &ControlSet) -> anyhow::Result<ControlSet> {
    if set.dim() != 1 {
        bail!("control refinement needs a one-dimensional control set, got dimension {}", set.dim());
    }
    let mut v = set.coords().to_vec();
    v.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(2 * v.len());
    for w in v.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.extend(v.last());
    Ok(ControlSet::new(1, out)?)
}

fn convergence(cmd: Convergence) -> Outcome {
    let spec = load(&cmd.problem)?;
    let reference = cmd.reference.or_else(|| {
        let p = &spec.params;
        (spec.name == "bachelier_put" && Some(&spec.x0[0]) == p.get("K"))
            .then(|| bachelier_atm_put(p["sigma0"], spec.horizon))
    });
    let levels = convergence_study(&spec, &cmd.nx_list, reference)?;
    match reference {
        Some(r) => println!("{} at x0 = {:?}, reference {r:.10}", spec.name, spec.x0),
        None => println!("{} at x0 = {:?}, errors against the previous level", spec.name, spec.x0),
    }
    println!("{:>6} {:>8} {:>16} {:>12} {:>8}", "nx", "nt", "value", "error", "ratio");
    let mut rows = Vec::new();
    for (i, l) in levels.iter().enumerate() {
        let ratio = match (i.checked_sub(1).and_then(|j| levels[j].error), l.error) {
            (Some(prev), Some(e)) if e > 0.0 => Some(prev / e),
            _ => None,
        };
        let fmt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |v| format!("{v:.p$e}"));
        println!("{:>6} {:>8} {:>16.10} {:>12} {:>8}", l.nx, l.nt, l.value, fmt(l.error, 3), ratio.map_or("-".into(), |r| format!("{r:.2}")));
        rows.push([
            l.nx.to_string(),
            l.nt.to_string(),
            l.value.to_string(),
            l.error.map_or(String::new(), |e| e.to_string()),
            ratio.map_or(String::new(), |r| r.to_string()),
        ]);
    }
    if let Some(mut w) = out_file(&cmd.out, "convergence.csv")?.map(csv::Writer::from_writer) {
        w.write_record(["nx", "nt", "value", "error", "ratio"]).map_err(anyhow::Error::from)?;
        for r in &rows {
            w.write_record(r).map_err(anyhow::Error::from)?;
        }
        w.flush().map_err(anyhow::Error::from)?;
    }
    if cmd.control_refinements > 0 {
        let nx = *cmd.nx_list.iter().max().ok_or_else(|| anyhow!("empty --nx-list"))?;
        let mut controls = spec.controls.clone();
        println!("control refinement at nx={nx}:");
        println!("{:>8} {:>16}", "points", "value");
        for _ in 0..=cmd.control_refinements {
            let s = ProblemSpec {
                controls: controls.clone(),
                ..spec.clone()
            };
            let grid = SpaceTimeGrid::with_cfl(&s, nx, Generator::Sup)?;
            let v = solve(&s, &grid, None)?.value_at(grid.t0, &s.x0);
            println!("{:>8} {:>16.10}", controls.len(), v);
            controls = refine_controls(&controls)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::SolvePde(c) => solve_pde(c),
        Command::SolveMc(c) => solve_mc(c),
        Command::Simulate(c) => simulate(c),
        Command::Ladder(c) => run_ladder(c),
        Command::Verify(c) => run_verify(c),
        Command::Convergence(c) => convergence(c),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
