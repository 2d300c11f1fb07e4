//! Optimal stopping of a (geometric) Brownian motion whose drift switches
//! from positive to negative at a random time with a uniform-type prior on
//! a finite interval.
//!
//! The optimal rules stop when a detection statistic first reaches a
//! time-dependent boundary. The boundary solves a Volterra-type integral
//! equation, computed here by backward induction over a Monte Carlo
//! expectation engine ([`boundary::solve_boundary`]); solved boundaries and
//! values are cross-checked against a brute-force simulation of the raw
//! model ([`validate`]).

pub mod boundary;
pub mod config;
pub mod error;
pub mod expectation;
pub mod grid;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod validate;

pub use boundary::{solve_boundary, stop_time_on_path, terminal_value, Boundary, SolveReport};
pub use config::ModelConfig;
pub use error::{Error, Result};
pub use expectation::{
    value_integral, volterra_integral, IntegralEstimate, McConfig, StartNode,
    DEFAULT_SOLVE_PATHS, DEFAULT_VALUE_PATHS,
};
pub use model::{
    pi_from_psi, psi_from_pi, DisorderModel, GainFunction, ProblemKind, StopProblem,
    UniformPrior,
};
pub use simulate::{
    euler_path, psi_from_observation, psi_path_exact, simulate_batch, simulate_disorder_path,
    PathBatch, PsiPath,
};
pub use validate::{
    check_lemma_identity, dichotomy_check, dominance_check, evaluate_policy, residual_check,
    CheckResult, DichotomyReport, DichotomyTolerance, DominanceReport, PolicyEstimate,
    ResidualReport, StoppingRule, ValidationReport,
};
