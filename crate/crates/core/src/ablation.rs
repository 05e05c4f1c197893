//! Training and scoring one model per modality combination.

use cxa_datagen::sample::TrajectorySample;
use serde::{Deserialize, Serialize};

use crate::config::{ModalitySet, ModelConfig, TrainConfig};
use crate::error::Result;
use crate::metrics::{evaluate, HorizonMode, MetricsReport};
use crate::model::Model;
use crate::train::train;

/// The twelve modality combinations, in table order.
pub const ABLATION_LABELS: [&str; 12] = [
    "Y", "Y+C", "Y+B", "Y+P", "Y+S", "Y+D", "Y+C+S", "Y+B+S", "Y+P+S", "Y+C+D", "Y+B+D", "Y+P+D",
];

pub fn ablation_grid() -> Vec<ModalitySet> {
    ABLATION_LABELS.iter().map(|l| l.parse().expect("grid labels parse")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

/// Trains a fresh model for `modalities` from `base` and evaluates it on `test`.
pub fn train_and_evaluate(
    base: &ModelConfig,
    modalities: ModalitySet,
    train_config: &TrainConfig,
    train_set: &[TrajectorySample],
    test_set: &[TrajectorySample],
    mode: HorizonMode,
) -> Result<MetricsReport> {
    let config = ModelConfig {
        modalities,
        ..base.clone()
    };
    let mut model = Model::new(config, train_config.seed)?;
    train(&mut model, train_set, train_config, None)?;
    evaluate(&model, test_set, mode)
}

/// Runs every row under the same seed and budget. A failing row is
/// recorded with its error and the remaining rows still run.
pub fn run_ablation(
    grid: &[ModalitySet],
    base: &ModelConfig,
    train_config: &TrainConfig,
    train_set: &[TrajectorySample],
    test_set: &[TrajectorySample],
    mode: HorizonMode,
) -> Vec<AblationRow> {
    grid.iter()
        .map(|&m| match train_and_evaluate(base, m, train_config, train_set, test_set, mode) {
            Ok(r) => AblationRow {
                label: m.label(),
                report: Some(r),
                error: None,
            },
            Err(e) => AblationRow {
                label: m.label(),
                report: None,
                error: Some(format!("{}: {e}", m.label())),
            },
        })
        .collect()
}
