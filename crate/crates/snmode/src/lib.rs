//! File formats, plots, run manifests, experiment drivers and the
//! command-line front end for `snmode-core`.

// `!(x > 0.0)` is how NaN gets rejected alongside bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod experiments;
pub mod io;
pub mod manifest;
pub mod svg;

pub use error::{Error, Result};
