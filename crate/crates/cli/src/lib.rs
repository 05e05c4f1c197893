//! Command-line front end: dataset generation, training, evaluation,
//! ablation, gradient checks and trajectory export.

pub mod commands;
pub mod config;
