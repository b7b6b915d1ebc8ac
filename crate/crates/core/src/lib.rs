//! Krylov-subspace Tikhonov regularization for ill-posed linear systems.
//!
//! The library reduces a large discretized operator equation
//! `T x = y_delta` to a small Krylov subspace with the Arnoldi process,
//! solves the regularized problem there (optionally iterating the Tikhonov
//! step), and lifts the result back to the full space. A spectral
//! parameter-choice rule selects the regularization parameter from the
//! singular values of the reduced Hessenberg matrix, balancing the
//! operator-approximation error against the data error; a discrepancy
//! principle drives the iteration count when the parameter is fixed
//! instead.
//!
//! Modules:
//!
//! * [`operator`]: dense and matrix-free operator realizations.
//! * [`mod@arnoldi`]: the Arnoldi decomposition and its approximation
//!   diagnostics.
//! * [`solver`]: single and iterated regularized solves, the
//!   discrepancy-principle driver, and a dense reference solver.
//! * [`paramselect`]: the parameter-choice equation and its root finder.
//! * [`problems`]: benchmark problem generators and the noise model.
//! * [`rng`]: the deterministic random-number generator behind the noise.

pub use nalgebra;

pub mod arnoldi;
pub mod error;
pub mod operator;
pub mod paramselect;
pub mod problems;
pub mod rng;
pub mod solver;

pub use arnoldi::{approximation_gap, arnoldi, gamma_ell, ArnoldiDecomposition, DEFAULT_BREAKDOWN_TOL};
pub use error::{Error, Result};
pub use operator::{
    operator_two_norm, DenseOperator, KronBlurOperator, LinearOperator, NormEstimate, OperatorKind,
};
pub use paramselect::{
    choose_alpha, feasibility, phi, solve_alpha, AlphaDiagnostics, AlphaSolution, HessenbergSvd,
    ParamRule, RuleVariant,
};
pub use problems::{add_noise, baart, blur, phillips, Problem, ProblemKind};
pub use solver::{
    at_solve, discrepancy_run, discrepancy_run_with_tau, iat_solve, oracle_full_space, SolveReport,
};
