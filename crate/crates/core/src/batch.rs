//! Stacking samples into model-ready tensors.

use cxa_datagen::keypoints::NeighborMode;
use cxa_datagen::sample::TrajectorySample;
use cxa_datagen::scene::SceneMode;
use cxa_tensor::Tensor;

use crate::config::{Modality, ModalitySet, EGO_DIM};
use crate::error::{CoreError, Result};

/// Neighbour pixel coordinates enter the model divided by the frame size,
/// alternating u and v.
pub const PIXEL_SCALE: [f64; 2] = [480.0, 270.0];

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ego_past: Tensor,
    pub target: Tensor,
    pub neighbors: Option<(NeighborMode, Tensor)>,
    pub scene: Option<(SceneMode, Tensor)>,
}

fn stack(rows: &[&[f64]], steps: usize, width: usize) -> Result<Tensor> {
    let data = rows.concat();
    Ok(Tensor::new([rows.len(), steps, width], data)?)
}

impl Batch {
    /// Builds a batch holding exactly the channels `modalities` needs.
    pub fn assemble(samples: &[&TrajectorySample], modalities: ModalitySet) -> Result<Batch> {
        let first = samples
            .first()
            .ok_or_else(|| CoreError::InvalidConfig("empty batch".into()))?;
        let (t_obs, t_pred) = (first.t_obs(), first.t_pred());
        let check = |m: Modality, s: &TrajectorySample, len: usize| -> Result<()> {
            let want = t_obs * m.input_dim();
            if len != want {
                return Err(CoreError::ModalityInput {
                    modality: m.to_string(),
                    detail: format!("sample {} has {len} values, expected {want}", s.id),
                });
            }
            Ok(())
        };
        for s in samples {
            check(Modality::Ego, s, s.ego_past.len())?;
            if s.ego_future.len() != t_pred * EGO_DIM {
                return Err(CoreError::ModalityInput {
                    modality: "target".into(),
                    detail: format!("sample {} has {} future values", s.id, s.ego_future.len()),
                });
            }
        }
        let past: Vec<&[f64]> = samples.iter().map(|s| s.ego_past.as_slice()).collect();
        let future: Vec<&[f64]> = samples.iter().map(|s| s.ego_future.as_slice()).collect();

        let neighbors = match modalities.neighbors {
            None => None,
            Some(mode) => {
                let m = Modality::Neighbors(mode);
                let mut rows = Vec::with_capacity(samples.len());
                for s in samples {
                    let v = s.neighbors.get(&mode).ok_or_else(|| CoreError::ModalityInput {
                        modality: m.to_string(),
                        detail: format!("sample {} has no {} channel", s.id, mode.name()),
                    })?;
                    check(m, s, v.len())?;
                    rows.push(v.iter().enumerate().map(|(i, x)| x / PIXEL_SCALE[i % 2]).collect::<Vec<f64>>());
                }
                let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
                Some((mode, stack(&refs, t_obs, m.input_dim())?))
            }
        };
        let scene = match modalities.scene {
            None => None,
            Some(mode) => {
                let m = Modality::Scene(mode);
                let mut rows = Vec::with_capacity(samples.len());
                for s in samples {
                    let v = s.scene.get(&mode).ok_or_else(|| CoreError::ModalityInput {
                        modality: m.to_string(),
                        detail: format!("sample {} has no {} channel", s.id, mode.name()),
                    })?;
                    check(m, s, v.len())?;
                    rows.push(v.as_slice());
                }
                Some((mode, stack(&rows, t_obs, m.input_dim())?))
            }
        };
        Ok(Batch {
            ego_past: stack(&past, t_obs, EGO_DIM)?,
            target: stack(&future, t_pred, EGO_DIM)?,
            neighbors,
            scene,
        })
    }

    pub fn size(&self) -> usize {
        self.ego_past.shape()[0]
    }

    pub fn t_obs(&self) -> usize {
        self.ego_past.shape()[1]
    }

    pub fn t_pred(&self) -> usize {
        self.target.shape()[1]
    }

    /// The stream tensor for a modality, if the batch carries it.
    pub fn input(&self, m: Modality) -> Option<&Tensor> {
        match m {
            Modality::Ego => Some(&self.ego_past),
            Modality::Neighbors(mode) => self.neighbors.as_ref().filter(|(n, _)| *n == mode).map(|(_, t)| t),
            Modality::Scene(mode) => self.scene.as_ref().filter(|(n, _)| *n == mode).map(|(_, t)| t),
        }
    }

    /// The last observed pose of every sample, `[B, 1, 7]`.
    pub fn seed_pose(&self) -> Tensor {
        let (b, t) = (self.size(), self.t_obs());
        let d = self.ego_past.data();
        let data = (0..b)
            .flat_map(|i| d[(i * t + t - 1) * EGO_DIM..(i * t + t) * EGO_DIM].iter().copied())
            .collect();
        Tensor::new([b, 1, EGO_DIM], data).expect("non-empty batch")
    }
}
