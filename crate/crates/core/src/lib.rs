pub mod cli;
pub mod data;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod image;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod sdf;
pub mod vae;

pub use error::{Error, Result};
