#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod bounds;
pub mod cli;
pub mod contrast;
pub mod design;
pub mod distributions;
pub mod error;
pub mod family;
pub mod linalg;
pub mod optim;
pub mod posi_mc;
pub mod rip;

pub use error::{Error, Result};
