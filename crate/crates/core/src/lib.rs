pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod permset;
pub mod pretext;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
