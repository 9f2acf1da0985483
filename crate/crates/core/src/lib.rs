//! Daily lexicon-marker prevalence series from timestamped text, peak
//! detection per dimension, forecasting with interchangeable strategies,
//! and forecast evaluation.

pub mod corpus;
pub mod eval;
pub mod error;
pub mod forecast;
pub mod io;
pub mod lexicon;
mod linalg;
pub mod peaks;
pub mod pipeline;
pub mod plot;
pub mod series;
pub mod synth;

pub use error::{Error, Result};
