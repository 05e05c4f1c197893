//! Minibatch training with greedy-decoding MSE and Adam.

use cxa_datagen::generate::splitmix64;
use cxa_datagen::sample::TrajectorySample;
use cxa_tensor::{clip_global_norm, Adam, AdamConfig, Tensor};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::config::TrainConfig;
use crate::error::{CoreError, Result};
use crate::model::Model;
use crate::params::Session;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss of every epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss of every optimizer step.
    pub step_losses: Vec<f64>,
    /// Validation loss after every epoch, when a validation set is given.
    pub validation_losses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    /// Parameters and epoch (1-based) of the lowest validation loss, when
    /// best tracking is on.
    pub best: Option<(usize, Vec<Tensor>)>,
}

/// One optimizer step on `batch`; returns the loss before the update.
pub fn train_step(model: &mut Model, adam: &mut Adam, batch: &Batch, clip_norm: Option<f64>) -> Result<f64> {
    let mut session = Session::trainable(&model.params);
    let loss = model.loss(&mut session, batch)?;
    let value = session.tape.value(loss).item()?;
    if !value.is_finite() {
        return Err(CoreError::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    let grads = session.tape.backward(loss)?;
    let mut flat: Vec<Vec<f64>> = session.param_vars().iter().map(|&v| grads.tensor(v).into_data()).collect();
    if let Some(max) = clip_norm {
        clip_global_norm(&mut flat, max);
    }
    let refs: Vec<&[f64]> = flat.iter().map(Vec::as_slice).collect();
    adam.step(model.params.tensors_mut(), &refs)?;
    Ok(value)
}

/// Mean loss over `samples` without updating anything.
pub fn mean_loss(model: &Model, samples: &[TrajectorySample], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&TrajectorySample> = chunk.iter().collect();
        let batch = Batch::assemble(&refs, model.config.modalities)?;
        let mut s = Session::frozen(&model.params);
        let loss = model.loss(&mut s, &batch)?;
        total += s.tape.value(loss).item()? * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Trains in place. Every epoch visits the training set in a fresh
/// permutation drawn from the configured seed; the last batch may be short.
pub fn train(
    model: &mut Model,
    samples: &[TrajectorySample],
    config: &TrainConfig,
    validation: Option<&[TrajectorySample]>,
) -> Result<TrainOutcome> {
    config.validate(samples.len())?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.learning_rate), model.params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ 0x5348_5546_464c_4500));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let refs: Vec<&TrajectorySample> = idx.iter().map(|&i| &samples[i]).collect();
            let batch = Batch::assemble(&refs, model.config.modalities)?;
            let loss = train_step(model, &mut adam, &batch, config.clip_norm).map_err(|e| match e {
                CoreError::NonFiniteLoss { .. } => CoreError::NonFiniteLoss { epoch, batch: b },
                other => other,
            })?;
            history.step_losses.push(loss);
            weighted += loss * idx.len() as f64;
        }
        history.epoch_losses.push(weighted / samples.len() as f64);
        if let Some(val) = validation {
            let v = mean_loss(model, val, 256)?;
            history.validation_losses.push(v);
            if config.track_best && best.as_ref().is_none_or(|(_, b, _)| v < *b) {
                best = Some((epoch + 1, v, model.params.tensors().to_vec()));
            }
        }
    }
    Ok(TrainOutcome {
        history,
        best: best.map(|(e, _, p)| (e, p)),
    })
}
