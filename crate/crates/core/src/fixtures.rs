//! Small, fully specified training setups shared by tests and the command line.

use cxa_datagen::generate::{generate_split, Split};
use cxa_datagen::sample::{Channels, TrajectorySample};
use cxa_datagen::world::WorldConfig;

use crate::config::{ModalitySet, ModelConfig, ModelKind, TrainConfig};
use crate::error::Result;

pub const OVERFIT_SAMPLES: usize = 32;
pub const OVERFIT_STEPS: usize = 2000;

/// d_model 64, d_ff 128, two layers per stream and in the decoder.
pub fn overfit_model(modalities: ModalitySet) -> ModelConfig {
    ModelConfig {
        kind: ModelKind::Cxa,
        d_model: 64,
        n_heads: 4,
        d_ff: 128,
        n_encoder_layers: 2,
        n_decoder_layers: 2,
        t_obs: 3,
        t_pred: 7,
        modalities,
    }
}

/// Full-batch training, so every epoch is one optimizer step.
pub fn overfit_training() -> TrainConfig {
    TrainConfig {
        epochs: OVERFIT_STEPS,
        batch_size: OVERFIT_SAMPLES,
        learning_rate: 1e-3,
        seed: 0,
        clip_norm: None,
        track_best: false,
    }
}

/// The first samples of a freshly generated training split.
pub fn overfit_samples(seed: u64) -> Result<Vec<TrajectorySample>> {
    let (_, samples) = generate_split(&WorldConfig::default(), &Channels::default(), seed, Split::Train, OVERFIT_SAMPLES)?;
    Ok(samples)
}
