//! Stick-figure keypoints of nearby people and their per-timestep encodings.

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{world_to_camera, CameraIntrinsics};
use crate::error::{DataError, Result};
use crate::geometry::EgoPose;
use crate::social_force::Vec2;

pub const NUM_KEYPOINTS: usize = 26;
pub const MAX_NEIGHBORS: usize = 5;
/// A person with fewer keypoints inside the frame counts as not visible.
pub const MIN_VISIBLE_KEYPOINTS: usize = 13;
pub const PERSON_HEIGHT: f64 = 1.7;
pub const NECK: usize = 18;
pub const HIP: usize = 19;

/// Body offsets (forward, left, up) in metres for a 1.7 m person, in the
/// 26-point Halpe order: nose, eyes, ears, shoulders, elbows, wrists, hips,
/// knees, ankles, head top, neck, hip centre, big toes, small toes, heels.
const BODY_OFFSETS: [[f64; 3]; NUM_KEYPOINTS] = [
    [0.10, 0.00, 1.58],
    [0.08, 0.03, 1.62],
    [0.08, -0.03, 1.62],
    [0.00, 0.08, 1.60],
    [0.00, -0.08, 1.60],
    [0.00, 0.20, 1.42],
    [0.00, -0.20, 1.42],
    [0.00, 0.25, 1.12],
    [0.00, -0.25, 1.12],
    [0.05, 0.25, 0.85],
    [0.05, -0.25, 0.85],
    [0.00, 0.12, 0.92],
    [0.00, -0.12, 0.92],
    [0.02, 0.12, 0.50],
    [0.02, -0.12, 0.50],
    [0.00, 0.12, 0.08],
    [0.00, -0.12, 0.08],
    [0.00, 0.00, 1.70],
    [0.00, 0.00, 1.47],
    [0.00, 0.00, 0.92],
    [0.15, 0.14, 0.00],
    [0.15, -0.14, 0.00],
    [0.13, 0.09, 0.00],
    [0.13, -0.09, 0.00],
    [-0.05, 0.12, 0.00],
    [-0.05, -0.12, 0.00],
];

/// A visible person as seen by the camera.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonView {
    /// Pixel coordinates; meaningful only where `visible` is set.
    pub pixels: [[f64; 2]; NUM_KEYPOINTS],
    pub visible: [bool; NUM_KEYPOINTS],
    /// Centre body point: midpoint of the neck and hip-centre projections,
    /// clamped to the frame.
    pub center: [f64; 2],
}

impl PersonView {
    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    /// 52 values: (u, v) per keypoint, zero for keypoints outside the frame.
    pub fn pose_row(&self) -> [f64; 2 * NUM_KEYPOINTS] {
        let mut out = [0.0; 2 * NUM_KEYPOINTS];
        for k in 0..NUM_KEYPOINTS {
            if self.visible[k] {
                out[2 * k] = self.pixels[k][0];
                out[2 * k + 1] = self.pixels[k][1];
            }
        }
        out
    }

    /// `[u_min, v_min, u_max, v_max]` over the visible keypoints.
    pub fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for k in (0..NUM_KEYPOINTS).filter(|&k| self.visible[k]) {
            let [u, v] = self.pixels[k];
            b = [b[0].min(u), b[1].min(v), b[2].max(u), b[3].max(v)];
        }
        b
    }

    /// Adds Gaussian pixel noise to the visible keypoints and the centre,
    /// keeping everything inside the frame.
    pub fn perturbed<R: Rng>(&self, rng: &mut R, sigma: f64, intr: &CameraIntrinsics) -> PersonView {
        let mut out = self.clone();
        if sigma <= 0.0 {
            return out;
        }
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        for k in 0..NUM_KEYPOINTS {
            if out.visible[k] {
                let [u, v] = out.pixels[k];
                out.pixels[k] = intr.clamp(u + normal.sample(rng), v + normal.sample(rng));
            }
        }
        let [u, v] = out.center;
        out.center = intr.clamp(u + normal.sample(rng), v + normal.sample(rng));
        out
    }
}

/// Projects the 26 body points of a person standing at `position` facing
/// `heading`. `None` (the person is treated as absent) when fewer than
/// [`MIN_VISIBLE_KEYPOINTS`] land inside the frame.
pub fn synthesize_keypoints(position: Vec2, heading: f64, ego: &EgoPose, intr: &CameraIntrinsics) -> Option<PersonView> {
    let (s, c) = heading.sin_cos();
    let scale = PERSON_HEIGHT / 1.7;
    let mut pixels = [[0.0; 2]; NUM_KEYPOINTS];
    let mut visible = [false; NUM_KEYPOINTS];
    let mut raw: [Option<[f64; 2]>; NUM_KEYPOINTS] = [None; NUM_KEYPOINTS];
    for (k, off) in BODY_OFFSETS.iter().enumerate() {
        let world = [
            position[0] + off[0] * c - off[1] * s,
            position[1] + off[0] * s + off[1] * c,
            off[2] * scale,
        ];
        raw[k] = intr.project_camera(world_to_camera(ego, world));
        if let Some([u, v]) = raw[k] {
            if intr.in_frame(u, v) {
                pixels[k] = [u, v];
                visible[k] = true;
            }
        }
    }
    if visible.iter().filter(|&&v| v).count() < MIN_VISIBLE_KEYPOINTS {
        return None;
    }
    let mut view = PersonView {
        pixels,
        visible,
        center: [0.0; 2],
    };
    view.center = match (raw[NECK], raw[HIP]) {
        (Some(n), Some(h)) => intr.clamp(0.5 * (n[0] + h[0]), 0.5 * (n[1] + h[1])),
        _ => {
            let b = view.bbox();
            [0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3])]
        }
    };
    Some(view)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborMode {
    Pose,
    Center,
    #[serde(rename = "bbox")]
    BBox,
}

impl NeighborMode {
    pub const ALL: [NeighborMode; 3] = [NeighborMode::Pose, NeighborMode::Center, NeighborMode::BBox];

    pub fn per_person_dim(self) -> usize {
        match self {
            NeighborMode::Pose => 2 * NUM_KEYPOINTS,
            NeighborMode::Center => 2,
            NeighborMode::BBox => 4,
        }
    }

    /// Width of one timestep's vector over all neighbour slots.
    pub fn row_dim(self) -> usize {
        MAX_NEIGHBORS * self.per_person_dim()
    }

    pub fn name(self) -> &'static str {
        match self {
            NeighborMode::Pose => "pose",
            NeighborMode::Center => "center",
            NeighborMode::BBox => "bbox",
        }
    }
}

impl FromStr for NeighborMode {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pose" | "p" => Ok(NeighborMode::Pose),
            "center" | "c" => Ok(NeighborMode::Center),
            "bbox" | "b" => Ok(NeighborMode::BBox),
            _ => Err(DataError::UnknownMode {
                kind: "neighbor",
                value: s.to_string(),
            }),
        }
    }
}

/// Concatenates the per-person encoding of up to five slots, zero-padding
/// absent people and unused slots.
pub fn neighbor_representation(slots: &[Option<PersonView>], mode: NeighborMode) -> Result<Vec<f64>> {
    if slots.len() > MAX_NEIGHBORS {
        return Err(DataError::InvalidConfig(format!(
            "{} neighbour slots, at most {MAX_NEIGHBORS} allowed",
            slots.len()
        )));
    }
    let per = mode.per_person_dim();
    let mut out = vec![0.0; MAX_NEIGHBORS * per];
    for (slot, view) in slots.iter().enumerate() {
        let Some(view) = view else { continue };
        let dst = &mut out[slot * per..(slot + 1) * per];
        match mode {
            NeighborMode::Pose => dst.copy_from_slice(&view.pose_row()),
            NeighborMode::Center => dst.copy_from_slice(&view.center),
            NeighborMode::BBox => dst.copy_from_slice(&view.bbox()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::yaw_to_quaternion;

    fn ego() -> EgoPose {
        EgoPose::new([0.0, 0.0, 1.4], yaw_to_quaternion(0.0))
    }

    #[test]
    fn person_ahead_is_fully_visible_and_centred() {
        let intr = CameraIntrinsics::default();
        // facing the camera
        let view = synthesize_keypoints([3.0, 0.0], std::f64::consts::PI, &ego(), &intr).unwrap();
        assert_eq!(view.visible_count(), NUM_KEYPOINTS);
        let mean_u = view.pixels.iter().map(|p| p[0]).sum::<f64>() / NUM_KEYPOINTS as f64;
        assert!((mean_u - 240.0).abs() <= 5.0, "mean u {mean_u}");
        for p in view.pixels {
            assert!(intr.in_frame(p[0], p[1]));
        }
    }

    #[test]
    fn centre_is_neck_hip_midpoint() {
        let intr = CameraIntrinsics::default();
        let view = synthesize_keypoints([4.0, 0.7], 0.4, &ego(), &intr).unwrap();
        let (n, h) = (view.pixels[NECK], view.pixels[HIP]);
        assert!((view.center[0] - 0.5 * (n[0] + h[0])).abs() < 1e-12);
        assert!((view.center[1] - 0.5 * (n[1] + h[1])).abs() < 1e-12);
    }

    #[test]
    fn person_behind_is_absent() {
        let intr = CameraIntrinsics::default();
        assert!(synthesize_keypoints([-3.0, 0.0], 0.0, &ego(), &intr).is_none());
        let row = neighbor_representation(&[None], NeighborMode::Pose).unwrap();
        assert_eq!(row, vec![0.0; 260]);
    }

    #[test]
    fn representation_widths() {
        assert_eq!(NeighborMode::Pose.row_dim(), 260);
        assert_eq!(NeighborMode::Center.row_dim(), 10);
        assert_eq!(NeighborMode::BBox.row_dim(), 20);
        let intr = CameraIntrinsics::default();
        let v = synthesize_keypoints([3.0, 0.0], 0.0, &ego(), &intr);
        let slots = vec![None, v.clone(), None];
        let row = neighbor_representation(&slots, NeighborMode::Pose).unwrap();
        assert_eq!(row.len(), 260);
        assert!(row[..52].iter().all(|&x| x == 0.0));
        assert_eq!(&row[52..104], &v.unwrap().pose_row()[..]);
        assert!(neighbor_representation(&vec![None; 6], NeighborMode::Center).is_err());
        assert!("skeleton".parse::<NeighborMode>().is_err());
    }

    #[test]
    fn single_visible_keypoint_gives_degenerate_box() {
        let mut view = synthesize_keypoints([3.0, 0.0], 0.0, &ego(), &CameraIntrinsics::default()).unwrap();
        view.visible = [false; NUM_KEYPOINTS];
        view.visible[7] = true;
        let b = view.bbox();
        assert_eq!([b[0], b[1]], [b[2], b[3]]);
        assert_eq!([b[0], b[1]], view.pixels[7]);
    }
}
