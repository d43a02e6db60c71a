//! Perturbation generation networks: a generator learns additive image
//! perturbations that raise or lower a frozen classifier's accuracy, trained
//! against a discriminator that predicts whether the classifier succeeds.

pub mod data;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod models;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
