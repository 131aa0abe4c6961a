pub mod association;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod hungarian;
pub mod io;
pub mod motion;
pub mod pipeline;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
