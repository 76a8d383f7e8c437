//! Temporal knowledge-graph question answering.

pub mod embed;
pub mod config;
pub mod encoder;
pub mod model;
pub mod error;
pub mod forge;
pub mod harness;
pub mod seed;
pub mod supervision;
pub mod synth;
pub mod tkg;

pub use error::{Result, TqrError};
