// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod armsim;
pub mod augment;
pub mod config;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod report;
pub mod spdh;
pub mod train;

pub use error::{Error, Result};
