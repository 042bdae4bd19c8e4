//! Simulation of distributed error-compensated stochastic gradient methods
//! with absolute (and, for comparison, contractive) compression.
//!
//! The crate is organised bottom-up:
//!
//! * [`problem`]: finite-sum objectives (ℓ2-regularised logistic regression and
//!   a ridge least-squares test objective), smoothness constants, a reference solver.
//! * [`data`]: LIBSVM ingestion, synthetic instances, worker partitioning.
//! * [`compressors`]: hard-threshold, rounding, TopK, RandK, and payload accounting.
//! * [`sampling`]: uniform / importance / full-batch sampling tables and their constants.
//! * [`estimators`]: EC-SGD-AS and EC-LSVRG gradient estimators.
//! * [`engine`]: the synchronous error-compensated round loop with diagnostics.
//! * [`theory`]: parameter calculus, stepsize rules and bound evaluation.
//! * [`report`]: config parsing, experiment presets, CSV and SVG output.

// `!(x > 0.0)` style checks are how NaN gets rejected along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compressors;
pub mod data;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod problem;
pub mod report;
pub mod rng;
pub mod sampling;
pub mod theory;
pub mod vector;

pub use compressors::{CompressedMessage, CompressorSpec};
pub use data::{Dataset, SparseRow, WorkerShard};
pub use engine::{RunConfig, RunOutput, TraceRecord};
pub use error::{Error, Result};
pub use estimators::{EstimatorKind, EstimatorState};
pub use problem::{Loss, Objective, ReferenceSolution, SmoothnessConstants};
pub use sampling::{SamplingKind, SamplingScheme};
pub use theory::TheoryParams;
pub use vector::DenseVector;
