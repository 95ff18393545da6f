//! Workflows behind the `maxvqa` command: configuration, ingest, cache
//! population, training, scoring, evaluation and figures.

pub mod commands;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod figures;
pub mod ingest;
