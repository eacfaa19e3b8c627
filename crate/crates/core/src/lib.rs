//! Zone temperature prediction from building data: data-driven trajectory
//! prediction, adaptive ARX baselines and a benchmark harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arx;
pub mod bench;
pub mod bundle;
pub mod bst;
pub mod error;
pub mod matrix;
pub mod plant;
pub mod select;
pub mod series;

pub use error::{Error, Result};
