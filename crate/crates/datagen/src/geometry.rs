//! Quaternions, ego poses and the relative-pose normalization.

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

/// Allowed deviation of a quaternion norm from 1 before it is rejected.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Quaternion stored as (w, x, y, z).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self ⊗ rhs`.
    pub fn mul(&self, r: &Quat) -> Quat {
        let (a, b) = (self, r);
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Rotates `v` by this (unit) quaternion.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let p = Quat::new(0.0, v[0], v[1], v[2]);
        let r = self.mul(&p).mul(&self.conjugate());
        [r.x, r.y, r.z]
    }

    /// Resolves the double cover: `w ≥ 0`, and on the `w = 0` boundary the
    /// first non-zero of (z, y, x) is made positive.
    pub fn canonical(&self) -> Quat {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else if self.z != 0.0 {
            self.z < 0.0
        } else if self.y != 0.0 {
            self.y < 0.0
        } else {
            self.x < 0.0
        };
        if flip {
            Quat::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            *self
        }
    }

    pub fn check_unit(&self) -> Result<()> {
        let norm = self.norm();
        if (norm - 1.0).abs() > UNIT_TOLERANCE || !norm.is_finite() {
            return Err(DataError::NonUnitQuaternion { norm });
        }
        Ok(())
    }

    /// Heading of the body x-axis projected on the ground plane.
    pub fn yaw(&self) -> f64 {
        let f = self.rotate([1.0, 0.0, 0.0]);
        f[1].atan2(f[0])
    }
}

/// Rotation about the vertical axis, sign-canonicalized.
pub fn yaw_to_quaternion(yaw: f64) -> Quat {
    let h = 0.5 * yaw;
    Quat::new(h.cos(), 0.0, 0.0, h.sin()).canonical()
}

/// Camera-wearer pose: position in metres and body orientation (body frame:
/// x forward, y left, z up).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoPose {
    pub position: [f64; 3],
    pub orientation: Quat,
}

impl EgoPose {
    pub const IDENTITY: EgoPose = EgoPose {
        position: [0.0; 3],
        orientation: Quat::IDENTITY,
    };

    pub fn new(position: [f64; 3], orientation: Quat) -> Self {
        Self {
            position,
            orientation,
        }
    }

    /// `[x, y, z, qw, qx, qy, qz]`.
    pub fn to_row(&self) -> [f64; 7] {
        let [x, y, z] = self.position;
        let q = self.orientation;
        [x, y, z, q.w, q.x, q.y, q.z]
    }

    pub fn from_row(r: &[f64]) -> Self {
        Self::new([r[0], r[1], r[2]], Quat::new(r[3], r[4], r[5], r[6]))
    }

    /// Expresses a world point in this pose's body frame.
    pub fn world_to_body(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [
            p[0] - self.position[0],
            p[1] - self.position[1],
            p[2] - self.position[2],
        ];
        self.orientation.conjugate().rotate(d)
    }
}

/// Re-expresses every pose relative to the first: `p' = R₀⁻¹(p − p₀)`,
/// `q' = q₀⁻¹ ⊗ q`. The first pose maps to exactly the identity.
pub fn normalize_relative(seq: &[EgoPose]) -> Result<Vec<EgoPose>> {
    let origin = *seq.first().ok_or(DataError::EmptySequence)?;
    for p in seq {
        p.orientation.check_unit()?;
    }
    let inv = origin.orientation.conjugate();
    Ok(seq
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i == 0 {
                return EgoPose::IDENTITY;
            }
            EgoPose::new(
                origin.world_to_body(p.position),
                inv.mul(&p.orientation).canonical(),
            )
        })
        .collect())
}

/// Inverse of [`normalize_relative`] given the sequence's original first pose.
pub fn denormalize(rel: &[EgoPose], origin: &EgoPose) -> Result<Vec<EgoPose>> {
    origin.orientation.check_unit()?;
    rel.iter()
        .map(|p| {
            p.orientation.check_unit()?;
            let r = origin.orientation.rotate(p.position);
            Ok(EgoPose::new(
                [
                    origin.position[0] + r[0],
                    origin.position[1] + r[1],
                    origin.position[2] + r[2],
                ],
                origin.orientation.mul(&p.orientation).canonical(),
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn close(a: Quat, b: Quat, tol: f64) -> bool {
        (a.w - b.w).abs() < tol && (a.x - b.x).abs() < tol && (a.y - b.y).abs() < tol && (a.z - b.z).abs() < tol
    }

    #[test]
    fn yaw_examples() {
        assert_eq!(yaw_to_quaternion(0.0), Quat::IDENTITY);
        assert!(close(yaw_to_quaternion(PI), Quat::new(0.0, 0.0, 0.0, 1.0), 1e-15));
        let q = yaw_to_quaternion(PI / 2.0);
        assert!(close(q, Quat::new(FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2), 1e-15));
        // beyond a half turn the raw form has w < 0 and gets flipped
        let q = yaw_to_quaternion(1.5 * PI);
        assert!(q.w >= 0.0);
        assert!((q.yaw() + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_boundary_keeps_z_non_negative() {
        assert_eq!(Quat::new(0.0, 0.0, 0.0, -1.0).canonical(), Quat::new(-0.0, -0.0, -0.0, 1.0));
        assert_eq!(Quat::new(0.0, 0.0, 0.0, 1.0).canonical(), Quat::new(0.0, 0.0, 0.0, 1.0));
    }

    fn sample_seq() -> Vec<EgoPose> {
        (0..6)
            .map(|i| {
                let t = i as f64;
                EgoPose::new([3.0 + t, -2.0 + 0.3 * t * t, 1.4], yaw_to_quaternion(0.7 + 0.2 * t))
            })
            .collect()
    }

    #[test]
    fn first_pose_becomes_identity_and_normalizing_is_idempotent() {
        let rel = normalize_relative(&sample_seq()).unwrap();
        assert!(rel[0].position.iter().all(|v| v.abs() < 1e-15));
        assert!(close(rel[0].orientation, Quat::IDENTITY, 1e-15));
        let twice = normalize_relative(&rel).unwrap();
        for (a, b) in rel.iter().zip(&twice) {
            for k in 0..7 {
                assert!((a.to_row()[k] - b.to_row()[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_unit_quaternion() {
        let mut seq = sample_seq();
        seq[2].orientation = Quat::new(1.0, 0.5, 0.0, 0.0);
        assert!(matches!(normalize_relative(&seq), Err(DataError::NonUnitQuaternion { .. })));
        assert!(matches!(normalize_relative(&[]), Err(DataError::EmptySequence)));
    }

    fn arb_quat() -> impl Strategy<Value = Quat> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 0.01)
            .prop_map(|(w, x, y, z)| Quat::new(w, x, y, z).normalized().canonical())
    }

    fn arb_pose() -> impl Strategy<Value = EgoPose> {
        (prop::array::uniform3(-20.0f64..20.0), arb_quat()).prop_map(|(p, q)| EgoPose::new(p, q))
    }

    proptest! {
        #[test]
        fn round_trip_and_rigidity(seq in prop::collection::vec(arb_pose(), 1..12)) {
            let rel = normalize_relative(&seq).unwrap();
            let back = denormalize(&rel, &seq[0]).unwrap();
            for (a, b) in seq.iter().zip(&back) {
                let (ra, rb) = (a.to_row(), b.to_row());
                for k in 0..7 {
                    prop_assert!((ra[k] - rb[k]).abs() < 1e-9);
                }
            }
            for p in &rel {
                prop_assert!((p.orientation.norm() - 1.0).abs() < 1e-9);
                prop_assert!(p.orientation.w >= 0.0);
            }
            let dist = |a: [f64; 3], b: [f64; 3]| ((a[0]-b[0]).powi(2) + (a[1]-b[1]).powi(2) + (a[2]-b[2]).powi(2)).sqrt();
            for i in 0..seq.len() {
                for j in 0..i {
                    let d0 = dist(seq[i].position, seq[j].position);
                    let d1 = dist(rel[i].position, rel[j].position);
                    prop_assert!((d0 - d1).abs() < 1e-9);
                }
            }
        }
    }
}
