//! Training, evaluation and IO for the panorama-exploring agent.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod episode;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod nets;
pub mod seed;
pub mod tensor;
pub mod trace;
pub mod trainer;

pub use error::{Error, Result};
