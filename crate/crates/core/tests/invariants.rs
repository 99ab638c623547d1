//! Invariants of the solvers checked on randomized data.

use ctlstop_core::expr::{parse_expression, Scope};
use ctlstop_core::hjb::{compare_fields, extract_policy, DEFAULT_STOP_TOLERANCE};
use ctlstop_core::rbsde::skorokhod_residual;
use ctlstop_core::{
    build_builtin, simulate_controlled, simulate_uncontrolled, solve, solve_rbsde, Generator, ParamMap,
    ProblemSpec, RegressionOptions, ScalarFn, SpaceTimeGrid, TimeGrid, TruncationIndex,
};
use proptest::prelude::*;

fn put(x0: f64) -> ProblemSpec {
    build_builtin(
        "bachelier_put",
        &ParamMap::new()
            .with("sigma0", 0.2)
            .with("K", 1)
            .with("T", 1)
            .with("x0", x0)
            .with("lo", -3)
            .with("hi", 5),
    )
    .unwrap()
}

fn drift_abs() -> ProblemSpec {
    build_builtin(
        "controlled_drift_abs",
        &ParamMap::new()
            .with("kappa", 1)
            .with("d", 1)
            .with("h_floor", -10)
            .with("T", 0.5)
            .with("lo", -3)
            .with("hi", 3),
    )
    .unwrap()
}

fn expr(spec: &ProblemSpec, text: &str) -> ScalarFn {
    let scope = Scope {
        state_dim: spec.dim,
        control_dim: 0,
        params: &spec.params,
    };
    parse_expression(text, &scope).unwrap().into()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn raising_the_terminal_raises_the_value(amp in 0.0f64..0.5, centre in -1.0f64..3.0, width in 0.1f64..2.0) {
        let spec = put(1.0);
        let grid = SpaceTimeGrid::with_cfl(&spec, 41, Generator::Sup).unwrap();
        let bump = format!("max(K - x1, 0) + {amp} * exp(-(x1 - {centre}) * (x1 - {centre}) / {width})");
        let upper = spec.clone().with_terminal(expr(&spec, &bump));
        let r = compare_fields(&solve(&spec, &grid, None).unwrap(), &solve(&upper, &grid, None).unwrap()).unwrap();
        prop_assert!(r.max_violation <= 1e-12);
    }

    #[test]
    fn truncation_is_monotone_in_n(n in 1u32..5, m in 1u32..5) {
        let spec = drift_abs();
        let grid = SpaceTimeGrid::with_cfl(&spec, 41, Generator::Sup).unwrap();
        let lo = solve(&spec, &grid, Some(TruncationIndex::new(n, m).unwrap())).unwrap();
        let hi = solve(&spec, &grid, Some(TruncationIndex::new(n + 1, m).unwrap())).unwrap();
        let full = solve(&spec, &grid, None).unwrap();
        prop_assert!(compare_fields(&lo, &hi).unwrap().max_violation <= 1e-12);
        prop_assert!(compare_fields(&hi, &full).unwrap().max_violation <= 1e-12);
    }

    #[test]
    fn value_dominates_obstacle_and_matches_terminal(x0 in 0.2f64..1.8) {
        let spec = put(x0);
        let grid = SpaceTimeGrid::with_cfl(&spec, 41, Generator::Sup).unwrap();
        let f = solve(&spec, &grid, None).unwrap();
        prop_assert!(f.values.iter().zip(&f.obstacle).all(|(v, h)| v >= h));
        for i in 0..grid.nodes() {
            prop_assert_eq!(f.slice(grid.nt)[i], spec.terminal(&[grid.coord(i)]).unwrap());
        }
        prop_assert!(f.value_at(0.0, &[x0]) >= spec.obstacle(0.0, &[x0]).unwrap() - 1e-12);
    }

    #[test]
    fn backward_solve_is_reflected_and_above_the_obstacle(seed in 0u64..1000) {
        let spec = put(0.9);
        let batch = simulate_uncontrolled(&spec, 0.0, &spec.x0, TimeGrid::new(0.0, 1.0, 10).unwrap(), 2_000, seed).unwrap();
        let r = solve_rbsde(&spec, &batch, &RegressionOptions::default(), None).unwrap();
        prop_assert_eq!(skorokhod_residual(&r), 0.0);
        prop_assert!(r.y.iter().zip(&r.obstacle).all(|(y, h)| y >= h));
        prop_assert!(r.k_increments.iter().all(|k| *k >= 0.0));
    }
}

#[test]
fn simulations_are_reproducible() {
    let spec = drift_abs();
    let grid = SpaceTimeGrid::with_cfl(&spec, 41, Generator::Sup).unwrap();
    let f = solve(&spec, &grid, None).unwrap();
    let policy = extract_policy(&spec, &f, DEFAULT_STOP_TOLERANCE).unwrap();
    let tg = TimeGrid::new(0.0, 0.5, 20).unwrap();
    let a = simulate_controlled(&spec, &policy, 0.0, &spec.x0, tg, 500, 9).unwrap();
    let b = simulate_controlled(&spec, &policy, 0.0, &spec.x0, tg, 500, 9).unwrap();
    let c = simulate_controlled(&spec, &policy, 0.0, &spec.x0, tg, 500, 10).unwrap();
    let mut wa = Vec::new();
    let mut wb = Vec::new();
    let mut wc = Vec::new();
    a.write_csv(&spec, &mut wa).unwrap();
    b.write_csv(&spec, &mut wb).unwrap();
    c.write_csv(&spec, &mut wc).unwrap();
    assert_eq!(wa, wb);
    assert_ne!(wa, wc);
}

#[test]
fn solves_are_bitwise_reproducible() {
    let spec = put(1.0);
    let grid = SpaceTimeGrid::with_cfl(&spec, 101, Generator::Sup).unwrap();
    let a = solve(&spec, &grid, None).unwrap();
    let b = solve(&spec, &grid, None).unwrap();
    assert_eq!(a.values, b.values);

    let batch = simulate_uncontrolled(&spec, 0.0, &spec.x0, TimeGrid::new(0.0, 1.0, 10).unwrap(), 5_000, 3).unwrap();
    let opts = RegressionOptions::default();
    let y1 = solve_rbsde(&spec, &batch, &opts, None).unwrap();
    let y2 = solve_rbsde(&spec, &batch, &opts, None).unwrap();
    assert_eq!(y1.y, y2.y);
    assert_eq!(y1.y0.to_bits(), y2.y0.to_bits());
}
