//! Small float64 neural-network core with exact backward passes.
//!
//! Layers keep the cache of their most recent `forward` call and consume it
//! in `backward`; a model instance is therefore single-threaded, while
//! independent instances can train side by side.

pub mod activation;
pub mod batchnorm;
pub mod container;
pub mod dense;
pub mod dropout;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod lstm;
pub mod optim;
pub mod param;
pub mod schedule;

pub use activation::Activation;
pub use batchnorm::BatchNorm;
pub use dense::Dense;
pub use dropout::Dropout;
pub use embedding::Embedding;
pub use error::{NnError, Result};
pub use gradcheck::{gradient_check, GradCheckReport, Objective};
pub use lstm::{Lstm, LstmGrads, LstmOutput, LstmState};
pub use optim::{Optimizer, OptimizerKind};
pub use param::{HasParams, Param};
pub use schedule::LrSchedule;
