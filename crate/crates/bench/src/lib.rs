//! Problems shared by the benchmarks in `benches/`.

use ctlstop_core::{build_builtin, ParamMap, ProblemSpec};

pub fn put() -> ProblemSpec {
    build_builtin(
        "bachelier_put",
        &ParamMap::new()
            .with("sigma0", 0.2)
            .with("K", 1)
            .with("T", 1)
            .with("lo", -3)
            .with("hi", 5),
    )
    .expect("valid builtin")
}

pub fn drift_abs(d: usize) -> ProblemSpec {
    build_builtin(
        "controlled_drift_abs",
        &ParamMap::new()
            .with("kappa", 1)
            .with("d", d)
            .with("h_floor", -10)
            .with("T", 1)
            .with("lo", -4)
            .with("hi", 4),
    )
    .expect("valid builtin")
}
