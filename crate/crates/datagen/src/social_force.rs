//! Social-force crowd dynamics: goal attraction, exponential repulsion from
//! other agents and from obstacles, integrated with symplectic Euler.

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

pub type Vec2 = [f64; 2];

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub goal: Vec2,
    pub preferred_speed: f64,
    pub radius: f64,
}

impl AgentState {
    pub fn speed(&self) -> f64 {
        norm(self.velocity)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Obstacle {
    Circle { center: Vec2, radius: f64 },
    Segment { a: Vec2, b: Vec2 },
}

impl Obstacle {
    /// Distance from `p` to the obstacle surface (negative inside a circle)
    /// and the unit normal pointing from the obstacle towards `p`.
    pub fn surface_offset(&self, p: Vec2) -> (f64, Vec2) {
        match *self {
            Obstacle::Circle { center, radius } => {
                let d = sub(p, center);
                let n = norm(d);
                let dir = if n > 1e-12 { [d[0] / n, d[1] / n] } else { [1.0, 0.0] };
                (n - radius, dir)
            }
            Obstacle::Segment { a, b } => {
                let ab = sub(b, a);
                let len2 = ab[0] * ab[0] + ab[1] * ab[1];
                let t = if len2 > 0.0 {
                    (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let c = [a[0] + t * ab[0], a[1] + t * ab[1]];
                let d = sub(p, c);
                let n = norm(d);
                let dir = if n > 1e-12 { [d[0] / n, d[1] / n] } else { [0.0, 1.0] };
                (n, dir)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocialForceParams {
    /// Time constant of the goal-attraction term.
    pub relaxation_time: f64,
    pub agent_strength: f64,
    pub agent_range: f64,
    pub obstacle_strength: f64,
    pub obstacle_range: f64,
    /// Speed cap as a multiple of the preferred speed.
    pub max_speed_factor: f64,
    /// Pairs further apart than this ignore each other.
    pub interaction_cutoff: f64,
}

impl Default for SocialForceParams {
    fn default() -> Self {
        Self {
            relaxation_time: 0.5,
            agent_strength: 10.0,
            agent_range: 0.3,
            obstacle_strength: 10.0,
            obstacle_range: 0.2,
            max_speed_factor: 2.0,
            interaction_cutoff: 6.0,
        }
    }
}

/// Rejects any pair of agents whose discs intersect.
pub fn check_no_overlap(agents: &[AgentState]) -> Result<()> {
    for i in 0..agents.len() {
        for j in 0..i {
            let d = norm(sub(agents[i].position, agents[j].position));
            if d < agents[i].radius + agents[j].radius {
                return Err(DataError::OverlappingAgents { a: j, b: i, distance: d });
            }
        }
    }
    Ok(())
}

/// Acceleration acting on agent `i`.
pub fn acceleration(i: usize, agents: &[AgentState], obstacles: &[Obstacle], params: &SocialForceParams) -> Vec2 {
    let a = &agents[i];
    let to_goal = sub(a.goal, a.position);
    let dist = norm(to_goal);
    let desired = if dist > 1e-9 {
        [a.preferred_speed * to_goal[0] / dist, a.preferred_speed * to_goal[1] / dist]
    } else {
        [0.0, 0.0]
    };
    let mut acc = [
        (desired[0] - a.velocity[0]) / params.relaxation_time,
        (desired[1] - a.velocity[1]) / params.relaxation_time,
    ];
    for (j, b) in agents.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = sub(a.position, b.position);
        let n = norm(d);
        if n > params.interaction_cutoff || n < 1e-12 {
            continue;
        }
        let mag = params.agent_strength * ((a.radius + b.radius - n) / params.agent_range).exp();
        acc[0] += mag * d[0] / n;
        acc[1] += mag * d[1] / n;
    }
    for o in obstacles {
        let (s, dir) = o.surface_offset(a.position);
        if s > params.interaction_cutoff {
            continue;
        }
        let mag = params.obstacle_strength * ((a.radius - s) / params.obstacle_range).exp();
        acc[0] += mag * dir[0];
        acc[1] += mag * dir[1];
    }
    acc
}

/// Advances every agent by `dt` seconds. Velocities are updated first and
/// the new velocity moves the agent (symplectic Euler); speeds are capped at
/// `max_speed_factor × preferred_speed`.
pub fn step_social_force(
    agents: &[AgentState],
    obstacles: &[Obstacle],
    params: &SocialForceParams,
    dt: f64,
) -> Result<Vec<AgentState>> {
    if !(dt > 0.0 && dt <= 0.2) {
        return Err(DataError::InvalidConfig(format!("time step {dt} outside (0, 0.2]")));
    }
    Ok((0..agents.len())
        .map(|i| {
            let acc = acceleration(i, agents, obstacles, params);
            let mut next = agents[i];
            let mut v = [next.velocity[0] + acc[0] * dt, next.velocity[1] + acc[1] * dt];
            let cap = params.max_speed_factor * next.preferred_speed;
            let s = norm(v);
            if s > cap {
                v = [v[0] * cap / s, v[1] * cap / s];
            }
            next.velocity = v;
            next.position = [next.position[0] + v[0] * dt, next.position[1] + v[1] * dt];
            next
        })
        .collect())
}
