//! CPU inference and analysis toolkit for detectors built from reparameterized
//! channel-shuffle blocks.

pub mod analysis;
pub mod bbox;
pub mod detect;
pub mod error;
pub mod eval;
pub mod model;
pub mod rcs;
pub mod reparam;
pub mod tensor;

pub use error::{Error, Result};
