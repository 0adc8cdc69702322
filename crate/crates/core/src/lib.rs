#![no_std]
// `!(x > 0.0)` is how NaN gets rejected alongside bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod data;
pub mod diff;
pub mod error;
pub mod field;
pub mod geometry;
pub mod math;
pub mod nets;
pub mod real;
pub mod solve;
pub mod train;

pub use error::{Error, Result};
