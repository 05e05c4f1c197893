//! Ego-centric polar occupancy grid used in place of learned scene codes.
//!
//! The forward 120° field of view is split into 36 angular columns (left to
//! right) by 18 radial bins out to 12 m. Each column is ray-cast against
//! obstacles and people; the flattened grid has 648 entries in `[0, 1]`,
//! column-major by angle (`index = column · 18 + radial_bin`).

use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::geometry::EgoPose;
use crate::social_force::{Obstacle, Vec2};

pub const ANGULAR_BINS: usize = 36;
pub const RADIAL_BINS: usize = 18;
pub const SCENE_DIM: usize = ANGULAR_BINS * RADIAL_BINS;
pub const SCENE_RANGE: f64 = 12.0;
pub const SCENE_FOV: f64 = 2.0 * PI / 3.0;
pub const FREE: f64 = 0.0;
pub const PERSON: f64 = 0.5;
pub const OBSTACLE: f64 = 1.0;
const SUB_RAYS: [f64; 3] = [-1.0 / 3.0, 0.0, 1.0 / 3.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneMode {
    Semantic,
    Depth,
}

impl SceneMode {
    pub const ALL: [SceneMode; 2] = [SceneMode::Semantic, SceneMode::Depth];

    pub fn name(self) -> &'static str {
        match self {
            SceneMode::Semantic => "semantic",
            SceneMode::Depth => "depth",
        }
    }
}

impl FromStr for SceneMode {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "semantic" | "s" => Ok(SceneMode::Semantic),
            "depth" | "d" => Ok(SceneMode::Depth),
            _ => Err(DataError::UnknownMode {
                kind: "scene",
                value: s.to_string(),
            }),
        }
    }
}

/// A person disc as seen by the scene encoder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersonDisc {
    pub center: Vec2,
    pub radius: f64,
}

/// Relative angle of the centre of column `a` (positive = left of heading).
pub fn column_angle(a: usize) -> f64 {
    let width = SCENE_FOV / ANGULAR_BINS as f64;
    0.5 * SCENE_FOV - (a as f64 + 0.5) * width
}

pub fn radial_width() -> f64 {
    SCENE_RANGE / RADIAL_BINS as f64
}

fn ray_circle(o: Vec2, d: Vec2, c: Vec2, r: f64) -> Option<f64> {
    let f = [o[0] - c[0], o[1] - c[1]];
    let cc = f[0] * f[0] + f[1] * f[1] - r * r;
    if cc <= 0.0 {
        return Some(0.0);
    }
    let b = f[0] * d[0] + f[1] * d[1];
    let disc = b * b - cc;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t >= 0.0).then_some(t)
}

fn ray_segment(o: Vec2, d: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let e = [b[0] - a[0], b[1] - a[1]];
    let den = d[0] * e[1] - d[1] * e[0];
    if den.abs() < 1e-12 {
        return None;
    }
    let w = [a[0] - o[0], a[1] - o[1]];
    let t = (w[0] * e[1] - w[1] * e[0]) / den;
    let s = (w[0] * d[1] - w[1] * d[0]) / den;
    (t >= 0.0 && (0.0..=1.0).contains(&s)).then_some(t)
}

/// Nearest hit along a ray: (distance, class value).
fn cast(o: Vec2, angle: f64, obstacles: &[Obstacle], people: &[PersonDisc]) -> Option<(f64, f64)> {
    let d = [angle.cos(), angle.sin()];
    let mut best: Option<(f64, f64)> = None;
    let mut consider = |t: Option<f64>, class: f64| {
        if let Some(t) = t {
            if t < SCENE_RANGE && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, class));
            }
        }
    };
    for ob in obstacles {
        let t = match *ob {
            Obstacle::Circle { center, radius } => ray_circle(o, d, center, radius),
            Obstacle::Segment { a, b } => ray_segment(o, d, a, b),
        };
        consider(t, OBSTACLE);
    }
    for p in people {
        consider(ray_circle(o, d, p.center, p.radius), PERSON);
    }
    best
}

/// Nearest hit (distance, class) per angular column, taking the closest of
/// three sub-rays spread across the column.
pub fn column_hits(obstacles: &[Obstacle], people: &[PersonDisc], ego: &EgoPose) -> Vec<Option<(f64, f64)>> {
    let o = [ego.position[0], ego.position[1]];
    let yaw = ego.orientation.yaw();
    let width = SCENE_FOV / ANGULAR_BINS as f64;
    (0..ANGULAR_BINS)
        .map(|a| {
            SUB_RAYS
                .iter()
                .filter_map(|off| cast(o, yaw + column_angle(a) + off * width, obstacles, people))
                .min_by(|x, y| x.0.total_cmp(&y.0))
        })
        .collect()
}

/// Encodes what the camera wearer sees ahead as a 648-vector in `[0, 1]`.
///
/// Semantic: a cell takes the class of its column's nearest hit (0.5 person,
/// 1 obstacle) once the hit lies before the cell's outer edge, else 0.
/// Depth: a cell holds `min(cell centre range, hit distance) / 12`, so cells
/// beyond the hit all carry the clamped hit distance.
pub fn encode_scene(obstacles: &[Obstacle], people: &[PersonDisc], ego: &EgoPose, mode: SceneMode) -> Vec<f64> {
    let hits = column_hits(obstacles, people, ego);
    let dr = radial_width();
    let mut out = vec![0.0; SCENE_DIM];
    for (a, hit) in hits.iter().enumerate() {
        for r in 0..RADIAL_BINS {
            let cell = &mut out[a * RADIAL_BINS + r];
            *cell = match mode {
                SceneMode::Semantic => match hit {
                    Some((t, class)) if *t < (r + 1) as f64 * dr => *class,
                    _ => FREE,
                },
                SceneMode::Depth => {
                    let range = hit.map_or(SCENE_RANGE, |(t, _)| t);
                    ((r as f64 + 0.5) * dr).min(range) / SCENE_RANGE
                }
            };
        }
    }
    out
}
