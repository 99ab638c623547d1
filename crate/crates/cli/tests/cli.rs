use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const PUT_FILE: &str = r#"
[problem] name=bachelier_put dim=1 T=1 x0=1
[params]  K=1 sigma0=0.2
[controls] dim=1 points=0
[sigma]   expr="sigma0"
[f]       expr="0"
[gamma]   expr="0"
[g]       expr="max(K - x1, 0)"
[h]       expr="max(K - x1, 0)"
[growth]  C_f=1 C_sigma_inv=5 C_poly=1 p=1
[domain]  lo=-3 hi=5
"#;

const PUT: [&str; 10] = [
    "--builtin",
    "bachelier_put",
    "--param",
    "sigma0=0.2",
    "--param",
    "K=1",
    "--param",
    "T=1",
    "--param",
    "lo=-3",
];

const DRIFT: [&str; 10] = [
    "--builtin",
    "controlled_drift_abs",
    "--param",
    "kappa=1",
    "--param",
    "d=1",
    "--param",
    "h_floor=-10",
    "--param",
    "T=1",
];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctlstop")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run_owned(args: &[String]) -> Output {
    run(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn solve_pde_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run_owned(&with(&["solve-pde"], &[&PUT[..], &["--nx", "201", "--out", out.to_str().unwrap()]].concat()));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("y(t0,x0) = 0.0797"));
    }
    for name in ["value_field.csv", "pde_summary.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let text = fs::read_to_string(a.join("value_field.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("t,x1,value,h,a_index,stop"));
    assert!(!text.contains('\r'));
}

#[test]
fn problem_file_and_builtin_give_the_same_field() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("put.prob");
    fs::write(&file, PUT_FILE).unwrap();
    let from_file = dir.path().join("file");
    let from_builtin = dir.path().join("builtin");
    let o = run(&["solve-pde", "--problem", file.to_str().unwrap(), "--nx", "101", "--out", from_file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run_owned(&with(
        &["solve-pde"],
        &[&PUT[..], &["--param", "hi=5", "--nx", "101", "--out", from_builtin.to_str().unwrap()]].concat(),
    ));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        fs::read(from_file.join("value_field.csv")).unwrap(),
        fs::read(from_builtin.join("value_field.csv")).unwrap()
    );
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.prob");
    fs::write(&bad, PUT_FILE.replace(r#"[h]       expr="max(K - x1, 0)""#, r#"[h]       expr="max(K - x1, 0) + 0.1""#)).unwrap();
    let o = run(&["solve-pde", "--problem", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("L_T <= g(x)"), "{}", stderr(&o));

    let o = run(&["solve-pde", "--builtin", "no_such_problem"]);
    assert_eq!(o.status.code(), Some(2));

    let o = run_owned(&with(&["solve-pde"], &[&DRIFT[..], &["--param", "d=3"]].concat()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));

    let o = run(&["solve-pde", "--problem", dir.path().join("missing.prob").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));

    let o = run_owned(&with(&["solve-pde"], &[&PUT[..], &["--nt", "3"]].concat()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("CFL"));
}

#[test]
fn ladder_reports_no_violations() {
    let o = run_owned(&with(
        &["ladder"],
        &[&DRIFT[..], &["--n", "1,2,4", "--m", "1,2,4", "--nx", "101", "--paths", "4000", "--steps", "20"]].concat(),
    ));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("0 monotonicity violations"));
}

#[test]
fn verify_on_the_put_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_owned(&with(
        &["verify"],
        &[&PUT[..], &["--param", "hi=5", "--paths", "20000", "--out", dir.path().to_str().unwrap()]].concat(),
    ));
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{out}{}", stderr(&o));
    for name in ["y0 vs closed form", "no early exercise", "Skorokhod residual = 0"] {
        let line = out.lines().find(|l| l.contains(name)).unwrap_or_else(|| panic!("{name} missing:\n{out}"));
        assert!(line.starts_with("PASS"), "{line}");
    }
    assert!(Path::new(&dir.path().join("verify.csv")).exists());
}

#[test]
fn simulate_and_mc_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run_owned(&with(&["simulate"], &[&DRIFT[..], &["--nx", "101", "--paths", "4000", "--steps", "20", "--out", out]].concat()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("strategies.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("strategy,mean,stderr,fraction_stopped_early"));
    assert_eq!(text.lines().count(), 1 + 1 + 6);

    let o = run_owned(&with(&["solve-mc"], &[&DRIFT[..], &["--paths", "4000", "--steps", "20", "--out", out]].concat()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("Skorokhod residual 0e0"));
    let text = fs::read_to_string(dir.path().join("backward_summary.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("node,t,mean_Y,mean_abs_Z,mean_dK,reflection_frequency"));
    assert_eq!(text.lines().count(), 1 + 21);
}

#[test]
fn convergence_table_shrinks() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_owned(&with(&["convergence"], &[&PUT[..], &["--param", "hi=5", "--out", dir.path().to_str().unwrap()]].concat()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(dir.path().join("convergence.csv")).unwrap();
    let errors: Vec<f64> = rdr.records().map(|r| r.unwrap()[3].parse().unwrap()).collect();
    assert_eq!(errors.len(), 3);
    assert!(errors[1] < errors[0] && errors[2] < errors[1], "{errors:?}");
}
