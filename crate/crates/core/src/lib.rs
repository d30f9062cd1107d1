// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod covariance;
pub mod error;
pub mod io;
pub mod matrix;
pub mod nkp;
pub mod regularize;
pub mod rng;
pub mod simulate;
pub mod tuning;

pub use error::{Error, Result};
