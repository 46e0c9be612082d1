// `!(a > b)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod discretization;
pub mod error;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
