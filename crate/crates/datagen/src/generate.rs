//! Dataset generation as a pure function of configuration and master seed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::DatasetManifest;
use crate::error::{DataError, Result};
use crate::sample::{slice_samples, Channels, TrajectorySample};
use crate::world::{simulate_episode, WorldConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Split::Train => 0x7472_6169_6e00_0000,
            Split::Test => 0x7465_7374_0000_0000,
        }
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of episode `index` of a split. Train and test episodes come from
/// disjoint streams, so overlapping windows never straddle the split.
pub fn episode_seed(master_seed: u64, split: Split, index: u64) -> u64 {
    splitmix64(splitmix64(master_seed ^ split.salt()).wrapping_add(index))
}

pub fn config_digest(config: &WorldConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Simulates episodes in index order and slices them until `count` samples
/// exist. Sample ids run from 0 in generation order.
pub fn generate_split(
    config: &WorldConfig,
    channels: &Channels,
    master_seed: u64,
    split: Split,
    count: usize,
) -> Result<(DatasetManifest, Vec<TrajectorySample>)> {
    if count == 0 {
        return Err(DataError::InvalidConfig(format!("{} split needs at least one sample", split.name())));
    }
    config.validate()?;
    if config.num_frames() < config.window_len() {
        return Err(DataError::EpisodeTooShort {
            frames: config.num_frames(),
            needed: config.window_len(),
        });
    }
    let mut samples = Vec::with_capacity(count);
    let mut index = 0u64;
    while samples.len() < count {
        let episode = simulate_episode(config, episode_seed(master_seed, split, index))?;
        for mut s in slice_samples(&episode, config, channels)? {
            if samples.len() == count {
                break;
            }
            s.id = samples.len() as u64;
            samples.push(s);
        }
        index += 1;
    }
    let manifest = DatasetManifest::new(
        split.name(),
        count,
        config.t_obs,
        config.t_pred,
        channels,
        master_seed,
        config_digest(config),
    );
    Ok((manifest, samples))
}
