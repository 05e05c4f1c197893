//! Position, orientation and overall MSE, plus errors at fixed horizons.

use cxa_datagen::sample::TrajectorySample;
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::config::EGO_DIM;
use crate::error::{CoreError, Result};
use crate::model::Model;

/// Reported horizons in seconds and their step counts at 2 fps.
pub const HORIZONS: [(f64, usize); 5] = [(1.0, 2), (1.5, 3), (2.0, 4), (2.5, 5), (3.0, 6)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HorizonMode {
    /// MSE over all of the first `h` steps.
    #[default]
    Cumulative,
    /// MSE at step `h` alone.
    PerStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonEntry {
    pub seconds: f64,
    pub steps: usize,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub modalities: String,
    pub samples: usize,
    pub mse_overall: f64,
    pub mse_position: f64,
    pub mse_orientation: f64,
    pub horizon_mode: HorizonMode,
    pub horizons: Vec<HorizonEntry>,
}

impl MetricsReport {
    /// How far the overall error is from `(3·position + 4·orientation)/7`.
    pub fn identity_residual(&self) -> f64 {
        (self.mse_overall - (3.0 * self.mse_position + 4.0 * self.mse_orientation) / 7.0).abs()
    }
}

/// Sum by recursive halving in index order; deterministic and accurate.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 8 => v.iter().sum(),
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Per-sample squared errors: position sum, orientation sum, and per-step sums.
struct SampleErrors {
    position: f64,
    orientation: f64,
    steps: Vec<f64>,
}

fn sample_errors(pred: &[f64], target: &[f64]) -> SampleErrors {
    let mut e = SampleErrors {
        position: 0.0,
        orientation: 0.0,
        steps: Vec::with_capacity(target.len() / EGO_DIM),
    };
    for (p, t) in pred.chunks_exact(EGO_DIM).zip(target.chunks_exact(EGO_DIM)) {
        let sq: Vec<f64> = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).collect();
        let pos: f64 = sq[..3].iter().sum();
        let ori: f64 = sq[3..].iter().sum();
        e.position += pos;
        e.orientation += ori;
        e.steps.push(pos + ori);
    }
    e
}

/// Builds a report from flat predictions and targets (each `t_pred × 7`
/// per sample).
pub fn metrics_from_predictions(
    preds: &[Vec<f64>],
    targets: &[&[f64]],
    t_pred: usize,
    mode: HorizonMode,
    model: &str,
    modalities: &str,
) -> Result<MetricsReport> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(CoreError::Evaluation(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if let Some(&(_, steps)) = HORIZONS.iter().find(|(_, steps)| *steps > t_pred) {
        return Err(CoreError::Evaluation(format!("horizon of {steps} steps exceeds t_pred {t_pred}")));
    }
    let errs: Vec<SampleErrors> = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            if p.len() != t_pred * EGO_DIM || t.len() != t_pred * EGO_DIM {
                return Err(CoreError::Evaluation(format!(
                    "prediction of {} values against target of {}",
                    p.len(),
                    t.len()
                )));
            }
            Ok(sample_errors(p, t))
        })
        .collect::<Result<_>>()?;
    let n = errs.len() as f64;
    let pos = pairwise_sum(&errs.iter().map(|e| e.position).collect::<Vec<_>>());
    let ori = pairwise_sum(&errs.iter().map(|e| e.orientation).collect::<Vec<_>>());
    let per_step: Vec<f64> = (0..t_pred)
        .map(|k| pairwise_sum(&errs.iter().map(|e| e.steps[k]).collect::<Vec<_>>()))
        .collect();
    let horizons = HORIZONS
        .iter()
        .map(|&(seconds, steps)| {
            let mse = match mode {
                HorizonMode::Cumulative => per_step[..steps].iter().sum::<f64>() / (n * (steps * EGO_DIM) as f64),
                HorizonMode::PerStep => per_step[steps - 1] / (n * EGO_DIM as f64),
            };
            HorizonEntry { seconds, steps, mse }
        })
        .collect();
    let steps = t_pred as f64;
    Ok(MetricsReport {
        model: model.to_string(),
        modalities: modalities.to_string(),
        samples: errs.len(),
        mse_overall: (pos + ori) / (n * steps * EGO_DIM as f64),
        mse_position: pos / (n * steps * 3.0),
        mse_orientation: ori / (n * steps * 4.0),
        horizon_mode: mode,
        horizons,
    })
}

/// Greedy predictions for every sample, in order.
pub fn predict_all(model: &Model, samples: &[TrajectorySample], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&TrajectorySample> = chunk.iter().collect();
        let batch = Batch::assemble(&refs, model.config.modalities)?;
        let pred = model.predict(&batch)?;
        out.extend(pred.data().chunks_exact(model.config.t_pred * EGO_DIM).map(<[f64]>::to_vec));
    }
    Ok(out)
}

pub fn evaluate(model: &Model, samples: &[TrajectorySample], mode: HorizonMode) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(CoreError::Evaluation("no samples to evaluate".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.t_pred() != model.config.t_pred || s.t_obs() != model.config.t_obs) {
        return Err(CoreError::Evaluation(format!(
            "sample {} has {}+{} steps, the model expects {}+{}",
            s.id,
            s.t_obs(),
            s.t_pred(),
            model.config.t_obs,
            model.config.t_pred
        )));
    }
    let preds = predict_all(model, samples, 256)?;
    let targets: Vec<&[f64]> = samples.iter().map(|s| s.ego_future.as_slice()).collect();
    metrics_from_predictions(
        &preds,
        &targets,
        model.config.t_pred,
        mode,
        model.config.kind.name(),
        &model.config.modalities.label(),
    )
}
