//! Negative sampling for dense retrieval under the quasi-triangular
//! principle, with the pieces needed to exercise it end to end.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod index;
pub mod sampler;
pub mod seeding;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
