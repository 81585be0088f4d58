//! Convex solvers: Lasso, row-group Lasso, ridge, plus the restricted
//! eigenvalue functional and the default tuning formulas.

mod defaults;
mod group_lasso;
mod lasso;
mod restricted_eigenvalue;
mod ridge;

use serde::{Deserialize, Serialize};

pub use defaults::{
    default_iterations, default_lambda1, default_lambda2, default_lambda3, signal_strength_check,
    SignalCheck, MAX_DEFAULT_ITERATIONS,
};
pub use group_lasso::{
    group_lasso_embedding, group_lasso_gram, select_rows, GroupLassoFit, GroupLassoProblem,
    SELECTION_THRESHOLD,
};
pub use lasso::{lasso, lasso_gram, lasso_objective, LassoFit, RegressionProblem};
pub use restricted_eigenvalue::{
    restricted_eigenvalue, restricted_eigenvalue_with, RestrictedEigenvalue, RestrictedEigenvalueOptions,
};
pub use ridge::{ridge, RidgeFit, RidgeSolver};

/// Convergence record shared by the iterative solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    /// Full sweeps performed.
    pub iterations: usize,
    /// Largest KKT violation at the returned point.
    pub kkt_violation: f64,
    pub converged: bool,
    /// Objective after each sweep, starting with the initial point.
    pub objective: Vec<f64>,
}
