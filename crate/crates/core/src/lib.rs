// `!(x < tol)` is used on purpose so that NaN fails a check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod linalg;
pub mod model;
pub mod scattering;
pub mod stats;
pub mod transition;

pub use error::{Error, Result};
