#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod field;
pub mod gaussian;
pub mod linalg;
pub mod mc;
pub mod norm_gap;
pub mod ou;
pub mod quad;
pub mod spectral;
pub mod systems;

pub use error::{OuError, Result};
