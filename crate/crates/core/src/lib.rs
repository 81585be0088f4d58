//! Sparse batch reinforcement learning on finite sparse linear discounted MDPs.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: the model type and exact oracles (policy value, optimal value,
//!   occupancy measures, matrix mean embedding).
//! - [`data`]: episodic batch collection, fold splitting, covariances.
//! - [`solvers`]: Lasso, group Lasso, ridge, restricted eigenvalue and the
//!   default regularization formulas.
//! - [`ope`] and [`fqi`]: the fitted evaluation and optimization algorithms.
//! - [`diagnostics`]: restricted chi-square divergence and audits.
//! - [`hard`]: the two-state lower-bound instance family.
//! - [`generate`] and [`harness`]: random instances and experiment sweeps.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod fqi;
pub mod generate;
pub mod hard;
pub mod harness;
pub(crate) mod linalg;
pub mod mdp;
pub mod ope;
pub mod rng;
pub mod solvers;

pub use data::{
    behavior_occupancy, collect, empirical_covariance, population_covariance, split_folds,
    BatchDataset, CovarianceKind, CovarianceMatrix, DatasetMeta, FoldSplit, Transition,
    TransitionStats,
};
pub use error::{Error, Result};
pub use mdp::{
    argmax_lowest, EmbeddingMatrix, InitialDistribution, MdpSpec, ModelAccess, OccupancyMeasure,
    Policy, SparseLinearMdp,
};
