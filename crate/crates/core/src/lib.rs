#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod cli;
pub mod data;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod output;
pub mod selection;

pub use error::{Error, Result};
