//! Cutting episodes into fixed-length forecasting windows.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DataError, Result};
use crate::geometry::{normalize_relative, EgoPose};
use crate::keypoints::{neighbor_representation, synthesize_keypoints, NeighborMode, PersonView, MAX_NEIGHBORS};
use crate::scene::{encode_scene, PersonDisc, SceneMode};
use crate::world::{Episode, WorldConfig};

pub const POSE_DIM: usize = 7;

/// One forecasting example. All per-timestep channels are stored flat,
/// timestep-major: `T_obs` rows of the channel's row width.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySample {
    pub id: u64,
    pub source_seed: u64,
    /// World pose the window is expressed relative to.
    pub origin: EgoPose,
    /// `T_obs × 7`, first row the identity pose.
    pub ego_past: Vec<f64>,
    /// `T_pred × 7`.
    pub ego_future: Vec<f64>,
    pub neighbors: BTreeMap<NeighborMode, Vec<f64>>,
    pub scene: BTreeMap<SceneMode, Vec<f64>>,
}

impl TrajectorySample {
    pub fn t_obs(&self) -> usize {
        self.ego_past.len() / POSE_DIM
    }

    pub fn t_pred(&self) -> usize {
        self.ego_future.len() / POSE_DIM
    }

    pub fn past_pose(&self, t: usize) -> EgoPose {
        EgoPose::from_row(&self.ego_past[t * POSE_DIM..(t + 1) * POSE_DIM])
    }

    pub fn future_pose(&self, t: usize) -> EgoPose {
        EgoPose::from_row(&self.ego_future[t * POSE_DIM..(t + 1) * POSE_DIM])
    }
}

/// Which channels to materialise for each window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Channels {
    pub neighbor_modes: Vec<NeighborMode>,
    pub scene_modes: Vec<SceneMode>,
}

impl Default for Channels {
    fn default() -> Self {
        Self {
            neighbor_modes: NeighborMode::ALL.to_vec(),
            scene_modes: SceneMode::ALL.to_vec(),
        }
    }
}

fn person_views(episode: &Episode, config: &WorldConfig) -> Vec<Vec<Option<PersonView>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(episode.seed ^ 0x6b65_7970_6f69_6e74);
    let sigma = if config.noise { config.keypoint_noise_px } else { 0.0 };
    episode
        .frames
        .iter()
        .map(|f| {
            f.neighbors
                .iter()
                .map(|n| {
                    let d = (n.position[0] - f.ego.position[0]).hypot(n.position[1] - f.ego.position[1]);
                    if d > config.neighbor_range {
                        return None;
                    }
                    synthesize_keypoints(n.position, n.heading, &f.ego, &config.intrinsics)
                        .map(|v| v.perturbed(&mut rng, sigma, &config.intrinsics))
                })
                .collect()
        })
        .collect()
}

/// Slides a window of `t_obs + t_pred` frames over the episode with stride 1.
///
/// Each window is expressed relative to its first measured ego pose. The
/// neighbour slots hold the (at most five) nearest people visible in the
/// window's first frame, nearest first, fixed for the whole window.
pub fn slice_samples(episode: &Episode, config: &WorldConfig, channels: &Channels) -> Result<Vec<TrajectorySample>> {
    let window = config.window_len();
    let frames = &episode.frames;
    if frames.len() < window {
        return Err(DataError::EpisodeTooShort {
            frames: frames.len(),
            needed: window,
        });
    }
    let views = person_views(episode, config);
    let scenes: BTreeMap<SceneMode, Vec<Vec<f64>>> = channels
        .scene_modes
        .iter()
        .map(|&mode| {
            let per_frame = frames
                .iter()
                .map(|f| {
                    let people: Vec<PersonDisc> = f
                        .neighbors
                        .iter()
                        .map(|n| PersonDisc {
                            center: n.position,
                            radius: n.radius,
                        })
                        .collect();
                    encode_scene(&episode.obstacles, &people, &f.ego, mode)
                })
                .collect();
            (mode, per_frame)
        })
        .collect();

    let mut out = Vec::with_capacity(frames.len() - window + 1);
    for start in 0..=frames.len() - window {
        let first = &frames[start];
        let mut visible: Vec<(f64, usize)> = first
            .neighbors
            .iter()
            .enumerate()
            .filter(|(k, _)| views[start][*k].is_some())
            .map(|(k, n)| ((n.position[0] - first.ego.position[0]).hypot(n.position[1] - first.ego.position[1]), k))
            .collect();
        visible.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        visible.truncate(MAX_NEIGHBORS);

        let world: Vec<EgoPose> = frames[start..start + window].iter().map(|f| f.ego_measured).collect();
        let rel = normalize_relative(&world)?;
        let flat = |poses: &[EgoPose]| poses.iter().flat_map(|p| p.to_row()).collect::<Vec<f64>>();

        let mut neighbors = BTreeMap::new();
        for &mode in &channels.neighbor_modes {
            let mut rows = Vec::with_capacity(config.t_obs * mode.row_dim());
            for frame in &views[start..start + config.t_obs] {
                // the same people, looked up again at each observed frame
                let slots: Vec<Option<PersonView>> = visible.iter().map(|&(_, k)| frame[k].clone()).collect();
                rows.extend(neighbor_representation(&slots, mode)?);
            }
            neighbors.insert(mode, rows);
        }
        let scene = scenes
            .iter()
            .map(|(&mode, per_frame)| (mode, per_frame[start..start + config.t_obs].concat()))
            .collect();

        out.push(TrajectorySample {
            id: start as u64,
            source_seed: episode.seed,
            origin: world[0],
            ego_past: flat(&rel[..config.t_obs]),
            ego_future: flat(&rel[config.t_obs..]),
            neighbors,
            scene,
        });
    }
    Ok(out)
}
