//! Solver library for the distributionally robust newsvendor with first and
//! second moment constraints under a Wasserstein ambiguity ball centered at
//! the empirical demand measure.
//!
//! The worst-case expected cost reduces to a finite-dimensional dual: for
//! each order quantity `Q` and reduced variable `xi > 0`, the inner problem
//! is an exact minimization of a piecewise convex quadratic over the
//! `(lambda1 >= 0, lambda2)` half-plane ([`dd_solver`]); a golden-section
//! line search over `xi` and a bisection on the subgradient over `Q`
//! ([`outer_solver`]) complete the solve. Independent brute-force, grid, and
//! primal-LP oracles ([`oracle`]) verify every layer.

pub mod dd_solver;
pub mod inner_eval;
pub mod model;
pub mod oracle;
pub mod outer_solver;
mod simplex;

pub use model::{
    CaseId, CostParams, DualPoint, MomentSpec, ProblemInstance, ProfitParams, RegionId,
    RegionOutcome, SolveReport, ValidatedInstance, Weighting,
};
