//! Pinhole projection from the chest-mounted camera.

use serde::{Deserialize, Serialize};

use crate::geometry::EgoPose;

/// Points closer than this along the optical axis are not projected.
pub const MIN_DEPTH: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 208.0,
            fy: 208.0,
            cx: 240.0,
            cy: 135.0,
            width: 480.0,
            height: 270.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn is_valid(&self) -> bool {
        self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0.0
            && self.height > 0.0
            && (0.0..=self.width).contains(&self.cx)
            && (0.0..=self.height).contains(&self.cy)
    }

    pub fn in_frame(&self, u: f64, v: f64) -> bool {
        (0.0..=self.width).contains(&u) && (0.0..=self.height).contains(&v)
    }

    pub fn clamp(&self, u: f64, v: f64) -> [f64; 2] {
        [u.clamp(0.0, self.width), v.clamp(0.0, self.height)]
    }

    /// Projects a camera-frame point (X right, Y down, Z forward), ignoring
    /// the frame bounds. `None` when the point is within [`MIN_DEPTH`].
    pub fn project_camera(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let [x, y, z] = p;
        (z > MIN_DEPTH).then(|| [self.fx * x / z + self.cx, self.fy * y / z + self.cy])
    }
}

/// Camera frame coordinates of a world point: the optical axis is the body
/// x-axis, image right is body −y and image down is body −z.
pub fn world_to_camera(ego: &EgoPose, world: [f64; 3]) -> [f64; 3] {
    let b = ego.world_to_body(world);
    [-b[1], -b[2], b[0]]
}

/// Pixel position of a world point, or `None` when it is behind the camera,
/// closer than [`MIN_DEPTH`], or outside the frame.
pub fn project_point(ego: &EgoPose, intr: &CameraIntrinsics, world: [f64; 3]) -> Option<[f64; 2]> {
    intr.project_camera(world_to_camera(ego, world))
        .filter(|&[u, v]| intr.in_frame(u, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::yaw_to_quaternion;

    #[test]
    fn optical_axis_hits_principal_point() {
        let intr = CameraIntrinsics::default();
        let ego = EgoPose::new([1.0, 2.0, 1.4], yaw_to_quaternion(0.3));
        for depth in [0.5, 3.0, 40.0] {
            let p = [1.0 + depth * 0.3f64.cos(), 2.0 + depth * 0.3f64.sin(), 1.4];
            let [u, v] = project_point(&ego, &intr, p).unwrap();
            assert!((u - 240.0).abs() < 1e-9 && (v - 135.0).abs() < 1e-9);
        }
    }

    #[test]
    fn hand_evaluated_camera_point() {
        let intr = CameraIntrinsics {
            fx: 240.0,
            ..CameraIntrinsics::default()
        };
        let [u, _] = intr.project_camera([1.0, 0.0, 2.0]).unwrap();
        assert_eq!(u, 360.0);
    }

    #[test]
    fn behind_and_near_points_are_absent() {
        let intr = CameraIntrinsics::default();
        let ego = EgoPose::new([0.0, 0.0, 1.4], yaw_to_quaternion(0.0));
        assert!(project_point(&ego, &intr, [-2.0, 0.0, 1.4]).is_none());
        assert!(project_point(&ego, &intr, [0.05, 0.0, 1.4]).is_none());
        // far off to the side: in front but outside the frame
        assert!(project_point(&ego, &intr, [1.0, 5.0, 1.4]).is_none());
        assert!(intr.is_valid());
    }
}
