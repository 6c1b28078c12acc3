pub mod chunker;
pub mod cli;
pub mod config;
pub mod convert;
pub mod dsp;
pub mod error;
pub mod losses;
pub mod models;
pub mod nn;
pub mod trainer;

pub use error::{Error, Result};
