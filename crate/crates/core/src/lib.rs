//! Solvers for finite-horizon stochastic control-stopping problems.
//!
//! The value of a problem is computed two ways: a monotone explicit
//! finite-difference scheme for the obstacle HJB equation ([`hjb`]) and a
//! regression Monte-Carlo scheme for the reflected BSDE with generator H*
//! ([`rbsde`]). Extracted policies are evaluated by forward simulation
//! ([`strategy`]), and [`verify`] runs the cross-checks between the three.

pub mod error;
pub mod expr;
pub mod grid;
pub mod hamiltonian;
pub mod hjb;
pub mod linalg;
pub mod problem;
pub mod problem_file;
pub mod rbsde;
pub mod regression;
pub mod policy;
pub mod sampling;
pub mod sde;
pub mod strategy;
pub mod verify;

pub use error::{Error, Result};
pub use hamiltonian::{
    cutoff, hamiltonian, sup_hamiltonian, truncated_sup_hamiltonian, unit_direction, Generator,
    HamiltonianValue, TruncationIndex,
};
pub use problem::{
    build_builtin, dominating_generator, validate, ControlSet, Domain, GrowthConstants, ParamMap,
    ProblemSpec, ScalarFn, ValidationReport,
};
pub use grid::SpaceTimeGrid;
pub use hjb::{extract_policy, solve, solve_with, ValueField};
pub use policy::PolicyField;
pub use problem_file::{emit, parse_problem_file};
pub use rbsde::{solve_rbsde, solve_rbsde_with, BackwardSolveResult};
pub use regression::{RegressionBasis, RegressionOptions, ZEstimator};
pub use sde::{simulate_controlled, simulate_uncontrolled, ControlRule, PathBatch, TimeGrid};
pub use strategy::{evaluate, optimality_gap, Strategy};
pub use verify::{run_acceptance, verify_problem, CheckLine, SuiteConfig};
