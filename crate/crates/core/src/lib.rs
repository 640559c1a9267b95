// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod community;
pub mod convgraph;
pub mod corpus;
pub mod doi;
pub mod eval;
pub mod error;
pub mod matrix;
pub mod netanalysis;
pub mod nmf;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod textprep;

pub use error::{Error, ErrorKind, Result};
