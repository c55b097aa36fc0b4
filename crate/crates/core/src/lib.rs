//! Eye-in-hand camera calibration toolkit.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod handeye;
pub mod icp;
pub mod metrics;
pub mod pnp;
pub mod synth;

pub use error::{Error, Result};
