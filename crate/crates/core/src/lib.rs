#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod raster;
pub mod taxonomy;
pub mod pipeline;
pub mod augment;
pub mod sampler;
pub mod losses;
pub mod model;
pub mod eval;
pub mod orchestrate;
pub mod cli;
