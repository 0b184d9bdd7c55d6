//! Weakly supervised audio-visual video parsing with an EMA teacher,
//! adaptive pseudo masks and class-aware cross-modal agreement.
//!
//! Everything runs on `f64` tensors with a small reverse-mode tape; there is
//! no external numerics backend.

pub mod datagen;
pub mod error;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod teacher;
pub mod tensor;
pub mod trainer;

mod textio;

pub use error::{Error, Result};
