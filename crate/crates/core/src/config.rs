//! Model, modality and training configuration, with desk and paper presets.

use std::fmt;
use std::str::FromStr;

use cxa_datagen::keypoints::NeighborMode;
use cxa_datagen::sample::Channels;
use cxa_datagen::scene::{SceneMode, SCENE_DIM};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CoreError, Result};

pub const EGO_DIM: usize = 7;

/// One input stream of the forecaster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Ego,
    Neighbors(NeighborMode),
    Scene(SceneMode),
}

impl Modality {
    pub fn token(self) -> char {
        match self {
            Modality::Ego => 'Y',
            Modality::Neighbors(NeighborMode::Center) => 'C',
            Modality::Neighbors(NeighborMode::BBox) => 'B',
            Modality::Neighbors(NeighborMode::Pose) => 'P',
            Modality::Scene(SceneMode::Semantic) => 'S',
            Modality::Scene(SceneMode::Depth) => 'D',
        }
    }

    /// Width of one timestep of this stream.
    pub fn input_dim(self) -> usize {
        match self {
            Modality::Ego => EGO_DIM,
            Modality::Neighbors(m) => m.row_dim(),
            Modality::Scene(_) => SCENE_DIM,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.token())
    }
}

/// The active streams: the ego trajectory always, plus at most one
/// neighbour representation and at most one scene encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct ModalitySet {
    pub neighbors: Option<NeighborMode>,
    pub scene: Option<SceneMode>,
}

impl ModalitySet {
    pub const EGO_ONLY: ModalitySet = ModalitySet {
        neighbors: None,
        scene: None,
    };

    pub fn new(neighbors: Option<NeighborMode>, scene: Option<SceneMode>) -> Self {
        Self { neighbors, scene }
    }

    /// Active streams in cascade order: ego, neighbours, scene.
    pub fn modalities(&self) -> Vec<Modality> {
        let mut v = vec![Modality::Ego];
        v.extend(self.neighbors.map(Modality::Neighbors));
        v.extend(self.scene.map(Modality::Scene));
        v
    }

    pub fn label(&self) -> String {
        self.modalities().iter().map(|m| m.token().to_string()).collect::<Vec<_>>().join("+")
    }

    /// Whether a dataset with these channels can feed this set.
    pub fn is_served_by(&self, channels: &Channels) -> bool {
        self.neighbors.is_none_or(|m| channels.neighbor_modes.contains(&m))
            && self.scene.is_none_or(|m| channels.scene_modes.contains(&m))
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for ModalitySet {
    type Err = CoreError;

    fn from_str(input: &str) -> Result<Self> {
        let fail = |reason: String| CoreError::InvalidModalities {
            input: input.to_string(),
            reason,
        };
        let mut set = ModalitySet::default();
        let mut has_ego = false;
        for raw in input.split('+') {
            let tok = raw.trim().to_ascii_lowercase();
            let (neighbors, scene) = match tok.as_str() {
                "y" => {
                    if has_ego {
                        return Err(fail("y given twice".into()));
                    }
                    has_ego = true;
                    continue;
                }
                "c" => (Some(NeighborMode::Center), None),
                "b" => (Some(NeighborMode::BBox), None),
                "p" => (Some(NeighborMode::Pose), None),
                "s" => (None, Some(SceneMode::Semantic)),
                "d" => (None, Some(SceneMode::Depth)),
                _ => return Err(fail(format!("unknown token `{}`", raw.trim()))),
            };
            if neighbors.is_some() {
                if set.neighbors.is_some() {
                    return Err(fail("at most one of c, b, p".into()));
                }
                set.neighbors = neighbors;
            }
            if scene.is_some() {
                if set.scene.is_some() {
                    return Err(fail("at most one of s, d".into()));
                }
                set.scene = scene;
            }
        }
        if !has_ego {
            return Err(fail("the ego trajectory y is required".into()));
        }
        Ok(set)
    }
}

impl Serialize for ModalitySet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for ModalitySet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Cxa,
    TripleLstm,
    LipLstm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cxa => "cxa",
            ModelKind::TripleLstm => "triple-lstm",
            ModelKind::LipLstm => "lip-lstm",
        }
    }
}

impl FromStr for ModelKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cxa" | "cxa-transformer" => Ok(ModelKind::Cxa),
            "triple-lstm" => Ok(ModelKind::TripleLstm),
            "lip-lstm" => Ok(ModelKind::LipLstm),
            _ => Err(CoreError::InvalidConfig(format!(
                "unknown model `{s}` (expected cxa, triple-lstm or lip-lstm)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(CoreError::InvalidConfig(format!("unknown preset `{s}` (expected desk or paper)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub t_obs: usize,
    pub t_pred: usize,
    pub modalities: ModalitySet,
}

impl ModelConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self {
                kind: ModelKind::Cxa,
                d_model: 128,
                n_heads: 4,
                d_ff: 512,
                n_encoder_layers: 1,
                n_decoder_layers: 1,
                t_obs: 3,
                t_pred: 7,
                modalities: ModalitySet::new(Some(NeighborMode::Pose), Some(SceneMode::Semantic)),
            },
            Preset::Paper => Self {
                kind: ModelKind::Cxa,
                d_model: 512,
                n_heads: 4,
                d_ff: 2048,
                n_encoder_layers: 3,
                n_decoder_layers: 3,
                t_obs: 3,
                t_pred: 7,
                modalities: ModalitySet::new(Some(NeighborMode::Pose), Some(SceneMode::Semantic)),
            },
        }
    }

    /// A d_model 8, single-head, single-layer model for gradient checks.
    pub fn tiny(kind: ModelKind, modalities: ModalitySet) -> Self {
        Self {
            kind,
            d_model: 8,
            n_heads: 1,
            d_ff: 16,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            t_obs: 3,
            t_pred: 7,
            modalities,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_model < 2 {
            return bad("d_model must be at least 2".into());
        }
        if self.d_ff == 0 {
            return bad("d_ff must be positive".into());
        }
        if self.t_obs < 1 || self.t_pred < 1 {
            return bad("t_obs and t_pred must be at least 1".into());
        }
        if self.kind == ModelKind::Cxa && (self.n_encoder_layers == 0 || self.n_decoder_layers == 0) {
            return bad("the transformer needs at least one encoder and one decoder layer".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Global gradient-norm clip; off when absent.
    pub clip_norm: Option<f64>,
    /// Keep the parameters with the lowest validation loss.
    pub track_best: bool,
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self {
                epochs: 40,
                batch_size: 64,
                learning_rate: 1e-3,
                seed: 0,
                clip_norm: None,
                track_best: false,
            },
            Preset::Paper => Self {
                epochs: 300,
                batch_size: 1024,
                learning_rate: 5e-5,
                seed: 0,
                clip_norm: None,
                track_best: false,
            },
        }
    }

    pub fn validate(&self, train_size: usize) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 || self.batch_size > train_size {
            return bad(format!(
                "batch size {} must be between 1 and the training-set size {train_size}",
                self.batch_size
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and non-negative", self.learning_rate));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm {c} must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modality_strings_parse_and_print() {
        let m: ModalitySet = "y+p+s".parse().unwrap();
        assert_eq!(m.label(), "Y+P+S");
        assert_eq!(m.modalities().iter().map(|m| m.input_dim()).collect::<Vec<_>>(), [7, 260, 648]);
        assert_eq!("Y".parse::<ModalitySet>().unwrap(), ModalitySet::EGO_ONLY);
        assert_eq!("Y+B+D".parse::<ModalitySet>().unwrap().label(), "Y+B+D");
        for bad in ["p+s", "y+x", "y+p+c", "y+s+d", ""] {
            let err = bad.parse::<ModalitySet>().unwrap_err().to_string();
            assert!(err.contains("y, c, b, p, s, d"), "{err}");
        }
    }

    #[test]
    fn presets_are_valid() {
        for p in [Preset::Desk, Preset::Paper] {
            ModelConfig::preset(p).validate().unwrap();
        }
        let paper = TrainConfig::preset(Preset::Paper);
        assert_eq!((paper.epochs, paper.batch_size, paper.learning_rate), (300, 1024, 5e-5));
        let bad = ModelConfig {
            n_heads: 3,
            ..ModelConfig::preset(Preset::Desk)
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::preset(Preset::Desk).validate(10).is_err());
    }
}
