//! Multilevel Monte Carlo learning of parameterized expectations.
//!
//! Neural networks learn `y -> E[max(S_T - K, 0)]` for geometric Brownian
//! motion over a box of parameters `y = (mu, sigma, s0, T, K)`. The
//! single-level trainer fits one net to Milstein payoffs; the multilevel
//! trainer fits one net per level to coupled fine-minus-coarse differences
//! and sums them. The planner picks levels and batch sizes from pilot
//! variance estimates, and the oracle module measures errors against the
//! closed form.
//!
//! Batch generation, gradient accumulation and error measurement run on
//! rayon with the `parallel` feature (default). Reductions use a fixed
//! chunking and tree order, so results are bit-identical for any thread
//! count and with the feature disabled.

// `!(x > 0.0)` style checks reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod model;
pub mod nn;
pub mod normal;
pub mod oracle;
pub mod par;
pub mod planner;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod studies;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{ParamVector, TrainingBox};
pub use nn::{LrSchedule, NetworkStructure, Optimizer, Weights};
pub use planner::AllocationPlan;
pub use rng::RngStream;
pub use sde::LevelSpec;
pub use trainer::{DataMode, MultilevelNet, TrainConfig, TrainedNet};
