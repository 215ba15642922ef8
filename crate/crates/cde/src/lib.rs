//! Conditional density estimation over discretized target spaces.
//!
//! Instead of predicting a single value, every model here maps a feature
//! vector to a full discrete distribution over the bins of an evenly spaced
//! grid laid over the target space. Two estimators do the heavy lifting:
//!
//! * **Multiscale nets** decompose the binned space by recursive halving
//!   and learn one binary splitting probability per cut, so density
//!   estimation becomes a stack of hierarchical classification problems
//!   ([`partition`]).
//! * **Trend-filtered multinomials** fit softmax logits over all bins and
//!   penalize the L1 norm of their k-th order graph differences along the
//!   bin lattice, which pushes the estimate toward piecewise-polynomial
//!   shapes ([`trendfilter`]).
//!
//! Plain multinomial classifiers, mixture density networks with full
//! Cholesky-parametrized covariances, and a point-estimate regressor serve
//! as baselines ([`models`]). [`data`] handles CSV/IDX ingestion, target
//! discretization, splitting, and a synthetic benchmark generator with
//! known ground truth; [`eval`] implements the metrics, validation grid
//! searches, and the experiment orchestrator behind the `cde` binary.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod grid;
pub mod models;
pub mod nn;
pub mod partition;
pub mod rng;
pub mod trendfilter;

pub use error::{Error, Result};
pub use grid::{DiscretizationGrid, GridAxis};
pub use models::{DensityEstimate, ModelKind, TrainConfig, TrainedModel};
pub use partition::{PartitionTree, SplitProbabilities};
pub use trendfilter::PenaltyMatrix;
