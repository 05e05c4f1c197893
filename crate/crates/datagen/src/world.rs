//! Episode simulation: a walled arena with pillars, a crowd driven by social
//! forces, and a chest-mounted camera on one of the walkers.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{DataError, Result};
use crate::geometry::{yaw_to_quaternion, EgoPose};
use crate::social_force::{check_no_overlap, step_social_force, AgentState, Obstacle, SocialForceParams, Vec2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Side length of the square arena, metres.
    pub arena_size: f64,
    pub num_pillars: usize,
    pub pillar_radius_min: f64,
    pub pillar_radius_max: f64,
    pub num_neighbors: usize,
    /// Recorded length of each episode, seconds.
    pub duration: f64,
    /// Simulated time before recording starts, seconds.
    pub warmup: f64,
    pub sim_dt: f64,
    pub fps: f64,
    pub t_obs: usize,
    pub t_pred: usize,
    pub ego_height: f64,
    pub ego_speed_min: f64,
    pub ego_speed_max: f64,
    pub neighbor_speed_min: f64,
    pub neighbor_speed_max: f64,
    /// Time constant of the exponential smoothing that turns velocity into heading.
    pub heading_time_constant: f64,
    pub noise: bool,
    pub keypoint_noise_px: f64,
    pub position_noise_m: f64,
    /// A walker within this distance of its goal picks a new one.
    pub goal_tolerance: f64,
    pub min_goal_distance: f64,
    /// Neighbours further than this from the camera are never selected.
    pub neighbor_range: f64,
    pub spawn_attempts: usize,
    pub intrinsics: CameraIntrinsics,
    pub social: SocialForceParams,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            arena_size: 20.0,
            num_pillars: 14,
            pillar_radius_min: 0.3,
            pillar_radius_max: 0.9,
            num_neighbors: 14,
            duration: 12.0,
            warmup: 2.0,
            sim_dt: 0.05,
            fps: 2.0,
            t_obs: 3,
            t_pred: 7,
            ego_height: 1.4,
            ego_speed_min: 1.0,
            ego_speed_max: 1.5,
            neighbor_speed_min: 0.8,
            neighbor_speed_max: 1.5,
            heading_time_constant: 0.5,
            noise: true,
            keypoint_noise_px: 1.0,
            position_noise_m: 0.01,
            goal_tolerance: 0.8,
            min_goal_distance: 12.0,
            neighbor_range: 12.0,
            spawn_attempts: 500,
            intrinsics: CameraIntrinsics::default(),
            social: SocialForceParams::default(),
        }
    }
}

impl WorldConfig {
    pub fn window_len(&self) -> usize {
        self.t_obs + self.t_pred
    }

    pub fn num_frames(&self) -> usize {
        (self.duration * self.fps + 1e-9).floor() as usize
    }

    fn steps_per_frame(&self) -> usize {
        (1.0 / (self.fps * self.sim_dt)).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DataError::InvalidConfig(msg));
        if !(self.arena_size.is_finite() && self.arena_size >= 4.0) {
            return bad(format!("arena_size {} must be at least 4 m", self.arena_size));
        }
        if !(self.pillar_radius_min > 0.0 && self.pillar_radius_min <= self.pillar_radius_max) {
            return bad("pillar radii must satisfy 0 < min <= max".into());
        }
        if self.t_obs < 1 || self.t_pred < 1 {
            return bad("t_obs and t_pred must both be at least 1".into());
        }
        if !(self.sim_dt > 0.0 && self.sim_dt <= 0.2) {
            return bad(format!("sim_dt {} outside (0, 0.2]", self.sim_dt));
        }
        if !(self.fps > 0.0) || self.steps_per_frame() == 0 {
            return bad(format!("fps {} not positive", self.fps));
        }
        let period = self.steps_per_frame() as f64 * self.sim_dt;
        if (period * self.fps - 1.0).abs() > 1e-6 {
            return bad(format!("frame period 1/{} is not a multiple of sim_dt {}", self.fps, self.sim_dt));
        }
        if !(self.duration > 0.0 && self.warmup >= 0.0) {
            return bad("duration must be positive and warmup non-negative".into());
        }
        if !(0.0 < self.ego_speed_min && self.ego_speed_min <= self.ego_speed_max) {
            return bad("ego speed range must satisfy 0 < min <= max".into());
        }
        if !(0.0 < self.neighbor_speed_min && self.neighbor_speed_min <= self.neighbor_speed_max) {
            return bad("neighbour speed range must satisfy 0 < min <= max".into());
        }
        if !(self.heading_time_constant > 0.0) {
            return bad("heading_time_constant must be positive".into());
        }
        if self.keypoint_noise_px < 0.0 || self.position_noise_m < 0.0 {
            return bad("noise levels must be non-negative".into());
        }
        if self.spawn_attempts == 0 {
            return bad("spawn_attempts must be positive".into());
        }
        if !self.intrinsics.is_valid() {
            return bad(format!("invalid camera intrinsics {:?}", self.intrinsics));
        }
        Ok(())
    }
}

/// A walker other than the camera wearer, as recorded at one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub id: usize,
    pub position: Vec2,
    pub velocity: Vec2,
    pub heading: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub time: f64,
    /// Where the camera really is.
    pub ego: EgoPose,
    /// The tracker's estimate, with measurement noise.
    pub ego_measured: EgoPose,
    pub neighbors: Vec<AgentSnapshot>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub seed: u64,
    pub obstacles: Vec<Obstacle>,
    pub frames: Vec<Frame>,
}

impl Episode {
    pub fn pillars(&self) -> impl Iterator<Item = (Vec2, f64)> + '_ {
        self.obstacles.iter().filter_map(|o| match *o {
            Obstacle::Circle { center, radius } => Some((center, radius)),
            Obstacle::Segment { .. } => None,
        })
    }
}

fn arena_walls(size: f64) -> [Obstacle; 4] {
    let c = [[0.0, 0.0], [size, 0.0], [size, size], [0.0, size]];
    [0, 1, 2, 3].map(|i| Obstacle::Segment { a: c[i], b: c[(i + 1) % 4] })
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn clear_of_pillars(p: Vec2, pillars: &[(Vec2, f64)], margin: f64) -> bool {
    pillars.iter().all(|&(c, r)| dist(p, c) >= r + margin)
}

fn random_point<R: Rng>(rng: &mut R, size: f64, margin: f64) -> Vec2 {
    [rng.gen_range(margin..size - margin), rng.gen_range(margin..size - margin)]
}

fn place_pillars<R: Rng>(rng: &mut R, cfg: &WorldConfig) -> Result<Vec<(Vec2, f64)>> {
    let mut pillars: Vec<(Vec2, f64)> = Vec::with_capacity(cfg.num_pillars);
    for k in 0..cfg.num_pillars {
        let mut placed = false;
        for _ in 0..cfg.spawn_attempts {
            let r = rng.gen_range(cfg.pillar_radius_min..=cfg.pillar_radius_max);
            let margin = r + 1.5;
            if 2.0 * margin >= cfg.arena_size {
                break;
            }
            let c = random_point(rng, cfg.arena_size, margin);
            // leave walkways of at least 1.2 m between pillars
            if pillars.iter().all(|&(o, ro)| dist(c, o) >= r + ro + 1.2) {
                pillars.push((c, r));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(DataError::SpawnFailed {
                what: format!("pillar {k}"),
                attempts: cfg.spawn_attempts,
            });
        }
    }
    Ok(pillars)
}

fn pick_goal<R: Rng>(rng: &mut R, cfg: &WorldConfig, pillars: &[(Vec2, f64)], from: Vec2) -> Vec2 {
    let mut fallback = from;
    for _ in 0..cfg.spawn_attempts {
        let g = random_point(rng, cfg.arena_size, 1.5);
        if !clear_of_pillars(g, pillars, 1.0) {
            continue;
        }
        if dist(g, from) >= cfg.min_goal_distance {
            return g;
        }
        fallback = g;
    }
    fallback
}

fn spawn_agents<R: Rng>(rng: &mut R, cfg: &WorldConfig, pillars: &[(Vec2, f64)]) -> Result<Vec<AgentState>> {
    let total = cfg.num_neighbors + 1;
    let mut agents: Vec<AgentState> = Vec::with_capacity(total);
    for k in 0..total {
        let (lo, hi) = if k == 0 {
            (cfg.ego_speed_min, cfg.ego_speed_max)
        } else {
            (cfg.neighbor_speed_min, cfg.neighbor_speed_max)
        };
        let mut placed = false;
        for _ in 0..cfg.spawn_attempts {
            let radius = if k == 0 { 0.3 } else { rng.gen_range(0.25..=0.35) };
            let p = random_point(rng, cfg.arena_size, 1.0);
            if !clear_of_pillars(p, pillars, radius + 0.3) {
                continue;
            }
            if agents.iter().any(|a| dist(a.position, p) < a.radius + radius + 0.3) {
                continue;
            }
            let speed = rng.gen_range(lo..=hi);
            let goal = pick_goal(rng, cfg, pillars, p);
            let d = dist(goal, p).max(1e-9);
            agents.push(AgentState {
                position: p,
                velocity: [speed * (goal[0] - p[0]) / d, speed * (goal[1] - p[1]) / d],
                goal,
                preferred_speed: speed,
                radius,
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(DataError::SpawnFailed {
                what: if k == 0 { "camera wearer".into() } else { format!("neighbour {k}") },
                attempts: cfg.spawn_attempts,
            });
        }
    }
    check_no_overlap(&agents)?;
    Ok(agents)
}

/// Simulates one episode. The result depends only on `config` and `seed`.
pub fn simulate_episode(config: &WorldConfig, seed: u64) -> Result<Episode> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pillars = place_pillars(&mut rng, config)?;
    let mut obstacles: Vec<Obstacle> = arena_walls(config.arena_size).to_vec();
    obstacles.extend(pillars.iter().map(|&(center, radius)| Obstacle::Circle { center, radius }));
    let mut agents = spawn_agents(&mut rng, config, &pillars)?;

    let alpha = 1.0 - (-config.sim_dt / config.heading_time_constant).exp();
    let mut smoothed: Vec<Vec2> = agents.iter().map(|a| a.velocity).collect();
    let heading = |v: Vec2| v[1].atan2(v[0]);

    let per_frame = config.steps_per_frame();
    let warmup_steps = (config.warmup / config.sim_dt).round() as usize;
    let frames_needed = config.num_frames();
    let total_steps = warmup_steps + frames_needed.saturating_sub(1) * per_frame;

    let mut tracks: Vec<(f64, Vec<AgentState>, Vec<f64>)> = Vec::with_capacity(frames_needed);
    for step in 0..=total_steps {
        if step >= warmup_steps && (step - warmup_steps).is_multiple_of(per_frame) {
            let t = (step - warmup_steps) as f64 * config.sim_dt;
            tracks.push((t, agents.clone(), smoothed.iter().map(|&v| heading(v)).collect()));
        }
        if step == total_steps {
            break;
        }
        agents = step_social_force(&agents, &obstacles, &config.social, config.sim_dt)?;
        for (s, a) in smoothed.iter_mut().zip(&agents) {
            s[0] += alpha * (a.velocity[0] - s[0]);
            s[1] += alpha * (a.velocity[1] - s[1]);
        }
        for a in agents.iter_mut() {
            if dist(a.position, a.goal) < config.goal_tolerance {
                a.goal = pick_goal(&mut rng, config, &pillars, a.position);
            }
        }
    }

    let noise = if config.noise && config.position_noise_m > 0.0 {
        Some(Normal::new(0.0, config.position_noise_m).expect("positive sigma"))
    } else {
        None
    };
    let frames = tracks
        .into_iter()
        .map(|(time, agents, headings)| {
            let e = &agents[0];
            let ego = EgoPose::new([e.position[0], e.position[1], config.ego_height], yaw_to_quaternion(headings[0]));
            let mut measured = ego;
            if let Some(n) = &noise {
                for c in measured.position.iter_mut() {
                    *c += n.sample(&mut rng);
                }
            }
            let neighbors = agents
                .iter()
                .zip(&headings)
                .enumerate()
                .skip(1)
                .map(|(id, (a, &h))| AgentSnapshot {
                    id,
                    position: a.position,
                    velocity: a.velocity,
                    heading: h,
                    radius: a.radius,
                })
                .collect();
            Frame {
                time,
                ego,
                ego_measured: measured,
                neighbors,
            }
        })
        .collect();
    Ok(Episode { seed, obstacles, frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episodes_are_deterministic_per_seed() {
        let cfg = WorldConfig::default();
        let a = simulate_episode(&cfg, 7).unwrap();
        let b = simulate_episode(&cfg, 7).unwrap();
        let c = simulate_episode(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.frames[5].ego, c.frames[5].ego);
        assert_eq!(a.frames.len(), 24);
        assert!(a.frames.len() as f64 / cfg.fps >= 10.0);
    }

    #[test]
    fn quaternions_are_unit_and_canonical() {
        let ep = simulate_episode(&WorldConfig::default(), 3).unwrap();
        for f in &ep.frames {
            let q = f.ego.orientation;
            assert!((q.norm() - 1.0).abs() < 1e-9 && q.w >= 0.0);
        }
    }

    #[test]
    fn heading_follows_straight_motion() {
        let cfg = WorldConfig {
            num_pillars: 0,
            num_neighbors: 0,
            warmup: 0.0,
            min_goal_distance: 10.0,
            noise: false,
            ..WorldConfig::default()
        };
        let ep = simulate_episode(&cfg, 5).unwrap();
        // before the goal is reached the walker moves on a straight line
        for w in ep.frames[..8].windows(2) {
            let step = [w[1].ego.position[0] - w[0].ego.position[0], w[1].ego.position[1] - w[0].ego.position[1]];
            let yaw = w[1].ego.orientation.yaw();
            assert!((step[1].atan2(step[0]) - yaw).abs() < 1e-6);
        }
    }

    #[test]
    fn impossible_spawn_is_reported() {
        let cfg = WorldConfig {
            arena_size: 5.0,
            num_pillars: 30,
            spawn_attempts: 50,
            ..WorldConfig::default()
        };
        assert!(matches!(simulate_episode(&cfg, 1), Err(DataError::SpawnFailed { .. })));
        let crowded = WorldConfig {
            arena_size: 5.0,
            num_pillars: 0,
            num_neighbors: 200,
            spawn_attempts: 50,
            ..WorldConfig::default()
        };
        assert!(matches!(simulate_episode(&crowded, 1), Err(DataError::SpawnFailed { .. })));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            WorldConfig { sim_dt: 0.3, ..Default::default() },
            WorldConfig { fps: 3.0, sim_dt: 0.2, ..Default::default() },
            WorldConfig { t_obs: 0, ..Default::default() },
            WorldConfig { arena_size: 1.0, ..Default::default() },
        ] {
            assert!(matches!(simulate_episode(&cfg, 0), Err(DataError::InvalidConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn measurement_noise_is_small_and_switchable() {
        let cfg = WorldConfig::default();
        let ep = simulate_episode(&cfg, 11).unwrap();
        for f in &ep.frames {
            for k in 0..3 {
                assert!((f.ego.position[k] - f.ego_measured.position[k]).abs() < 0.06);
            }
        }
        let clean = simulate_episode(&WorldConfig { noise: false, ..cfg }, 11).unwrap();
        assert!(clean.frames.iter().all(|f| f.ego == f.ego_measured));
    }
}
