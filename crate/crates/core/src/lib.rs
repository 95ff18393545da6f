//! Multi-axis, language-prompted video quality assessment.
//!
//! The pipeline samples temporally aligned fragments, runs frozen visual,
//! text and fragment encoders, fuses local visual features with fragment
//! features through a residual MLP, and scores sixteen quality axes by
//! comparing the fused features with learnable positive/negative prompts.
//! Opinion analytics and correlation metrics live alongside.

pub mod analytics;
pub mod backbones;
pub mod dimensions;
pub mod error;
pub mod evaluator;
pub mod fragments;
pub mod prompts;
pub mod training;

pub use error::{Error, Result};
