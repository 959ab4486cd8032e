//! Obstacle fields, the safety margin `g` whose sublevel set `g ≤ 0` is the
//! safe set S, membership in the invariant set C, and the tracking cost.
//!
//! For systems that carry velocity in their state, every body disc (and the
//! hitch-angle term) is inflated by the distance it can still travel while
//! the braking law stops the vehicle. This makes S forward invariant under
//! braking, so the backup policy can reach C from anywhere in S.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::systems::{wrap_angle, Aabb, Vehicle};
use crate::trajectory::{ControlSequence, State, StateTrajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Obstacle {
    Circle { center: [f64; 2], radius: f64 },
    Box { min: [f64; 2], max: [f64; 2] },
}

impl Obstacle {
    pub fn validate(&self) -> Result<()> {
        match self {
            Obstacle::Circle { center, radius } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(CoreError::Config(format!("radius must be positive, got {radius}")));
                }
                if !center.iter().all(|c| c.is_finite()) {
                    return Err(CoreError::Config("center must be finite".into()));
                }
            }
            Obstacle::Box { min, max } => {
                if !(min[0] < max[0] && min[1] < max[1]) {
                    return Err(CoreError::Config(format!("box min {min:?} must be below max {max:?}")));
                }
            }
        }
        Ok(())
    }

    /// Signed distance from `p` to the obstacle surface, negative inside.
    pub fn signed_distance(&self, p: [f64; 2]) -> f64 {
        match self {
            Obstacle::Circle { center, radius } => {
                (p[0] - center[0]).hypot(p[1] - center[1]) - radius
            }
            Obstacle::Box { min, max } => {
                let cx = 0.5 * (min[0] + max[0]);
                let cy = 0.5 * (min[1] + max[1]);
                let qx = (p[0] - cx).abs() - 0.5 * (max[0] - min[0]);
                let qy = (p[1] - cy).abs() - 0.5 * (max[1] - min[1]);
                let outside = qx.max(0.0).hypot(qy.max(0.0));
                outside + qx.max(qy).min(0.0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Goal {
    pub position: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
    #[serde(default = "Goal::default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "Goal::default_heading_tolerance")]
    pub heading_tolerance: f64,
}

impl Goal {
    fn default_tolerance() -> f64 {
        0.3
    }
    fn default_heading_tolerance() -> f64 {
        0.2
    }

    pub fn at(position: [f64; 2]) -> Self {
        Self {
            position,
            heading: None,
            tolerance: Self::default_tolerance(),
            heading_tolerance: Self::default_heading_tolerance(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetySpec {
    /// Clearance depth of C inside S, meters.
    pub c_margin: f64,
    /// Hitch-angle depth of C inside the jackknife limit, radians.
    pub c_angle: f64,
    /// Speed below which a state may belong to C.
    pub v_eps: f64,
    /// Inflate body discs by the braking distance.
    pub braking_envelope: bool,
}

impl Default for SafetySpec {
    fn default() -> Self {
        Self {
            c_margin: 0.0,
            c_angle: 0.0,
            v_eps: 0.05,
            braking_envelope: true,
        }
    }
}

impl SafetySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_margin >= 0.0) {
            return Err(CoreError::Config("c_margin must be >= 0".into()));
        }
        if !(self.c_angle >= 0.0) {
            return Err(CoreError::Config("c_angle must be >= 0".into()));
        }
        if !(self.v_eps > 0.0) {
            return Err(CoreError::Config("v_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// `J = Σ_t (w_track‖p_t − p_goal‖² + w_u‖u_t‖²)·dt + w_terminal‖p_T − p_goal‖²`,
/// plus `w_heading·(θ_T − θ_goal)²` when the goal fixes a heading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSpec {
    pub w_track: f64,
    pub w_u: f64,
    pub w_terminal: f64,
    pub w_heading: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self {
            w_track: 1.0,
            w_u: 0.01,
            w_terminal: 10.0,
            w_heading: 0.0,
        }
    }
}

/// Membership tests for the safe set S and the invariant set C.
pub trait SafeSet: Send + Sync {
    /// `g(x)`; the state is safe iff `g(x) ≤ 0`.
    fn margin(&self, x: &State) -> f64;

    fn in_safe_set(&self, x: &State) -> bool {
        self.margin(x) <= 0.0
    }

    fn in_invariant_set(&self, x: &State) -> bool;

    /// `(x ∈ S, x ∈ C)`.
    fn classify(&self, x: &State) -> (bool, bool) {
        (self.in_safe_set(x), self.in_invariant_set(x))
    }
}

/// `g` split into the geometric part (obstacles, world bounds, speed cap)
/// and the jackknife part. `g = max(geometric, hitch)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginBreakdown {
    pub geometric: f64,
    pub hitch: f64,
}

#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub system: Arc<dyn Vehicle>,
    pub obstacles: Vec<Obstacle>,
    pub start: State,
    pub goal: Goal,
    pub world: Aabb,
    pub safety: SafetySpec,
    pub cost: CostSpec,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("system", &self.system.id())
            .field("obstacles", &self.obstacles)
            .field("start", &self.start)
            .field("goal", &self.goal)
            .finish_non_exhaustive()
    }
}

impl Scenario {
    /// Checks obstacle shapes, the safety spec, and that the start is in S.
    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.obstacles.iter().enumerate() {
            o.validate()
                .map_err(|e| CoreError::Config(format!("obstacles[{i}]: {e}")))?;
        }
        self.safety.validate()?;
        if self.start.len() != self.system.state_dim() {
            return Err(CoreError::Dimension {
                what: "start state",
                expected: self.system.state_dim(),
                found: self.start.len(),
            });
        }
        if !self.world.contains(self.goal.position) {
            return Err(CoreError::Config("goal position lies outside the world bounds".into()));
        }
        let g = self.margin(&self.start);
        if g > 0.0 {
            return Err(CoreError::UnsafeInitialState { margin: g });
        }
        Ok(())
    }

    pub fn margin_breakdown(&self, x: &State) -> MarginBreakdown {
        let sys = &*self.system;
        let bodies = sys.body_poses(x);
        let envelope = self.safety.braking_envelope.then(|| sys.braking_envelope(x));
        let mut geometric = f64::NEG_INFINITY;
        for (i, b) in bodies.iter().enumerate() {
            let r = b.radius + envelope.as_ref().map_or(0.0, |e| e.discs[i]);
            for o in &self.obstacles {
                geometric = geometric.max(r - o.signed_distance(b.center));
            }
            let w = &self.world;
            geometric = geometric
                .max(w.min[0] + r - b.center[0])
                .max(b.center[0] + r - w.max[0])
                .max(w.min[1] + r - b.center[1])
                .max(b.center[1] + r - w.max[1]);
        }
        if let Some(vmax) = sys.speed_limit() {
            geometric = geometric.max(sys.speed(x) - vmax);
        }
        let hitch = match (sys.hitch_angle(x), sys.jackknife_limit()) {
            (Some(phi), Some(limit)) => {
                phi.abs() + envelope.as_ref().map_or(0.0, |e| e.hitch) - limit
            }
            _ => f64::NEG_INFINITY,
        };
        MarginBreakdown { geometric, hitch }
    }

    pub fn is_jackknifed(&self, x: &State) -> bool {
        match (self.system.hitch_angle(x), self.system.jackknife_limit()) {
            (Some(phi), Some(limit)) => phi.abs() > limit,
            _ => false,
        }
    }

    pub fn goal_reached(&self, x: &State) -> bool {
        let p = self.system.position(x);
        let g = &self.goal;
        let close = (p[0] - g.position[0]).hypot(p[1] - g.position[1]) <= g.tolerance;
        let aligned = match (g.heading, self.system.heading(x)) {
            (Some(target), Some(h)) => wrap_angle(h - target).abs() <= g.heading_tolerance,
            _ => true,
        };
        close && aligned
    }
}

impl SafeSet for Scenario {
    fn margin(&self, x: &State) -> f64 {
        let m = self.margin_breakdown(x);
        m.geometric.max(m.hitch)
    }

    fn in_invariant_set(&self, x: &State) -> bool {
        self.classify(x).1
    }

    fn classify(&self, x: &State) -> (bool, bool) {
        let m = self.margin_breakdown(x);
        let safe = m.geometric.max(m.hitch) <= 0.0;
        if self.system.stops_instantly() {
            return (safe, safe);
        }
        let invariant = m.geometric <= -self.safety.c_margin
            && m.hitch <= -self.safety.c_angle
            && self.system.speed(x) <= self.safety.v_eps;
        (safe, invariant)
    }
}

pub fn safety_margin(x: &State, scenario: &Scenario) -> f64 {
    scenario.margin(x)
}

pub fn in_safe_set(x: &State, scenario: &Scenario) -> bool {
    scenario.in_safe_set(x)
}

pub fn in_invariant_set(x: &State, scenario: &Scenario) -> bool {
    scenario.in_invariant_set(x)
}

pub fn trajectory_cost(
    states: &StateTrajectory,
    controls: &ControlSequence,
    scenario: &Scenario,
) -> Result<f64> {
    if states.len() != controls.len() + 1 {
        return Err(CoreError::Contract(format!(
            "trajectory has {} states for {} controls",
            states.len(),
            controls.len()
        )));
    }
    let sys = &*scenario.system;
    let w = &scenario.cost;
    let dt = sys.dt();
    let goal = scenario.goal.position;
    let dist2 = |x: &State| {
        let p = sys.position(x);
        (p[0] - goal[0]).powi(2) + (p[1] - goal[1]).powi(2)
    };
    let mut j = 0.0;
    for (x, u) in states.states.iter().zip(&controls.controls) {
        let u2: f64 = u.iter().map(|v| v * v).sum();
        j += (w.w_track * dist2(x) + w.w_u * u2) * dt;
    }
    let last = states.last();
    j += w.w_terminal * dist2(last);
    if let (Some(target), Some(h)) = (scenario.goal.heading, sys.heading(last)) {
        j += w.w_heading * wrap_angle(h - target).powi(2);
    }
    Ok(j)
}
