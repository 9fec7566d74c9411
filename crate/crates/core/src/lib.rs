//! Hybrid 1-D CNN + self-attention classifier for segmented heartbeat
//! signals, trained with Adam under a validation-loss-driven learning-rate
//! scheduler.
//!
//! Module map:
//! - [`tensor`]: dense tensors, differentiable primitives, gradient checking
//! - [`model`]: architecture config, network assembly, checkpoint I/O
//! - [`optim`]: Adam, reduce-on-plateau / static schedulers, early stopping
//! - [`data`]: CSV ingestion, per-beat preprocessing, splitting, batching, synthetic beats
//! - [`metrics`]: confusion matrix, accuracy, F1
//! - [`runner`]: training / evaluation / scheduler benchmark orchestration

pub mod error;
pub mod tensor;

pub use error::{NialError, Result};
pub mod data;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod runner;
