//! FALNet forecasting core.

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod decomposition;
pub mod error;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{FalnetError, Result};
