// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod contrastive;
pub mod data;
pub mod downstream;
pub mod encoder;
pub mod evaluation;
pub mod experiment;
pub mod error;
pub mod manipulations;
pub mod nn;

pub use error::{Error, Result};
