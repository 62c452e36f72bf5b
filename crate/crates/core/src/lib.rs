pub mod annotate;
pub mod error;
pub mod eval;
pub mod geo;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod refine;
pub mod represent;
pub mod synth;
pub mod train;
pub mod way;

pub use error::{Error, Result};
