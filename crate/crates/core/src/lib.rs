// `!(x > 0.0)` is how argument checks reject NaN alongside bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod error;
pub mod experiments;
pub mod kernel;
pub mod model;
pub mod numerics;
pub mod source;
pub mod spectrum;
pub mod trainer;

pub use error::{Error, Result};
