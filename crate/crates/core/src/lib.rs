// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod datagen;
pub mod error;
pub mod gp;
pub mod hv;
pub mod io;
pub mod linalg;
pub mod mpc;
pub mod opt;
pub mod pipeline;
pub mod report;
pub mod sim;
pub mod sparse;

pub use error::{Error, Result};
