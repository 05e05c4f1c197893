//! Egocentric trajectory forecasting with a cascaded cross-attention
//! transformer, two recurrent baselines, and the training and evaluation
//! harness around them.

pub mod ablation;
pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod gradcheck_suite;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod report;
pub mod split;
pub mod train;
pub mod transformer;

pub use config::{Modality, ModalitySet, ModelConfig, ModelKind, Preset, TrainConfig};
pub use error::{CoreError, Result};
pub use model::Model;
