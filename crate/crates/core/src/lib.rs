//! Corner-guided transformer for artistic scene text recognition.

pub mod checkpoint;
pub mod corners;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod image;
pub mod losses;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
