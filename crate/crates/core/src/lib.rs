#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod dataio;
pub mod eegprep;
pub mod error;
pub mod features;
pub mod fmriprep;
pub mod fusion;
pub mod harness;
pub mod linalg;
pub mod manifold;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
