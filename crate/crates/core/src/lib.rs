//! Feedforward networks whose hidden widths are learned during training.
//!
//! Hidden units are added with a random fan-in and a zero fan-out, trained under an ℓ2 group
//! penalty on their fan-ins with the radial-angular optimizers in [`optim`], and removed once
//! shrinkage drives their fan-in to exactly zero. Normalization uses CapNorm, which only divides
//! by the batch standard deviation when it exceeds one, so the penalty cannot be undone by
//! rescaling.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod error;
mod linalg;
pub mod model;
pub mod optim;
pub mod regularization;
pub mod topology;
pub mod train;

pub use error::{Error, Result};
