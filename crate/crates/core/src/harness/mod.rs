//! Evaluation and experiment orchestration.

pub mod lab;
pub mod metrics;
pub mod render;

pub use lab::{summarize, Lab, Outcome, Record, Regime, Summary, Timing, Trained, MAIN_VARIANTS};
pub use metrics::{evaluate, fingerprint, hits_at_k, EvalReport};
pub use render::write_reports;
