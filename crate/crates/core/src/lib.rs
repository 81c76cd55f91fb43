//! Two-stream video classification downstream of CNN feature extraction:
//! stacked LSTM classifiers over frame sequences, a feature fusion network
//! whose fusion layer is trained with ℓ21/ℓ11 proximal steps, and late fusion
//! plus evaluation of their per-class scores.

pub mod cli;
mod checkpoint;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod fusion;
pub mod lstm;
pub mod metrics;
pub mod numcore;
pub mod verify;

pub use error::{Error, Result};
