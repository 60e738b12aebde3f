#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dof;
pub mod error;
pub mod field;
pub mod image_io;
pub mod kernel;
pub mod lens;
pub mod preset;
pub mod psf;
pub mod psflib;
pub mod raytrace;
pub mod sim;

pub use error::{Error, Result};
