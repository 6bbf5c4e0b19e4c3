//! Data pipeline, model assembly, hyperparameter search and evaluation for
//! outcome prediction on business process event logs.

pub mod error;
pub mod eval;
pub mod event_log;
pub mod featurize;
pub mod hypermodel;
pub mod pseudo_embed;
pub mod synthgen;
pub mod tuner;
pub mod vectorize;

pub use error::{CoreError, Result};
