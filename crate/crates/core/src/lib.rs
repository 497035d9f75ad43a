// `!(x < y)` comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acoustic;
pub mod audio;
pub mod classifier;
pub mod config;
pub mod corpus;
pub mod digest;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod features;
pub mod fusion;
pub mod model;
pub mod nn;
pub mod seed;
pub mod semantic;
pub mod training;

pub use error::{Error, Result};
