//! Builtin coefficient strings, re-parsed and evaluated, against closures
//! that perform the same operations in the same order.

use ctlstop_core::expr::{parse_expression, Env, Scope};
use ctlstop_core::{build_builtin, ParamMap, ProblemSpec, ScalarFn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Reference = Box<dyn Fn(f64, &[f64], &[f64]) -> f64>;

fn reparse(spec: &ProblemSpec, f: &ScalarFn) -> ctlstop_core::expr::Expr {
    let text = f.as_expr().expect("builtins are expressions").to_string();
    let scope = Scope {
        state_dim: spec.dim,
        control_dim: spec.controls.dim(),
        params: &spec.params,
    };
    parse_expression(&text, &scope).unwrap_or_else(|e| panic!("{text}: {e}"))
}

fn check(spec: &ProblemSpec, cases: Vec<(&ScalarFn, Reference)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let parsed: Vec<_> = cases.iter().map(|(f, _)| reparse(spec, f)).collect();
    for _ in 0..10_000 {
        let t = rng.random_range(0.0..=spec.horizon);
        let x: Vec<f64> = (0..spec.dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        let a = spec.controls.point(rng.random_range(0..spec.controls.len())).to_vec();
        for ((_, reference), e) in cases.iter().zip(&parsed) {
            let got = e.eval(&Env { t, x: &x, a: &a }).unwrap();
            assert_eq!(got.to_bits(), reference(t, &x, &a).to_bits(), "{e} at t={t} x={x:?} a={a:?}");
        }
    }
}

#[test]
fn bachelier_and_decaying_obstacle() {
    let params = ParamMap::new().with("sigma0", 0.2).with("K", 1.1).with("T", 1.5);
    let spec = build_builtin("bachelier_put", &params).unwrap();
    let c = &spec.coefficients;
    check(
        &spec,
        vec![
            (&c.sigma[0], Box::new(|_, _, _| 0.2)),
            (&c.drift[0], Box::new(|_, _, _| 0.0)),
            (&c.running_reward, Box::new(|_, _, _| 0.0)),
            (&spec.terminal, Box::new(|_, x, _| (1.1 - x[0]).max(0.0))),
            (spec.obstacle.as_ref().unwrap(), Box::new(|_, x, _| (1.1 - x[0]).max(0.0))),
        ],
    );

    let spec = build_builtin("decaying_obstacle", &params.with("beta", 0.7)).unwrap();
    check(
        &spec,
        vec![(
            spec.obstacle.as_ref().unwrap(),
            Box::new(|t, x, _| (1.1 - x[0]).max(0.0) * (1.0 + 0.7 * (1.5 - t))),
        )],
    );
}

#[test]
fn controlled_drift_abs() {
    for d in [1usize, 2] {
        let spec = build_builtin(
            "controlled_drift_abs",
            &ParamMap::new().with("kappa", 1.5).with("d", d).with("h_floor", -10).with("T", 1),
        )
        .unwrap();
        let c = &spec.coefficients;
        let mut cases: Vec<(&ScalarFn, Reference)> = vec![
            (&c.running_reward, Box::new(|_, _, _| 0.0)),
            (spec.obstacle.as_ref().unwrap(), Box::new(|_, _, _| -10.0)),
        ];
        for i in 0..d {
            cases.push((&c.drift[i], Box::new(move |_, _, a| a[i])));
            for j in 0..d {
                let v = if i == j { 1.0 } else { 0.0 };
                cases.push((&c.sigma[i * d + j], Box::new(move |_, _, _| v)));
            }
        }
        let g: Reference = if d == 1 {
            Box::new(|_, x, _| x[0].abs())
        } else {
            Box::new(|_, x, _| (x[0] * x[0] + x[1] * x[1]).sqrt())
        };
        cases.push((&spec.terminal, g));
        check(&spec, cases);
    }
}
