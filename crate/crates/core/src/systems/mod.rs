//! Concrete plants and the geometry they expose to the safety layer.

mod double_integrator;
mod tractor_trailer;

pub use double_integrator::DoubleIntegrator2D;
pub use tractor_trailer::{AccelTractorTrailer, KinematicTractorTrailer, TrailerGeometry};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::trajectory::{DynamicsModel, State};

/// One covering disc of the robot body.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyPose {
    pub center: [f64; 2],
    pub radius: f64,
}

pub type Bodies = SmallVec<[BodyPose; 2]>;

/// Worst-case motion of the body discs and hitch angle while the braking
/// law brings the vehicle to rest from the current state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BrakingEnvelope {
    /// Per body disc, in the order of [`Vehicle::body_poses`].
    pub discs: SmallVec<[f64; 2]>,
    pub hitch: f64,
}

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Aabb {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// A dynamics model that also knows its body geometry and kinematic limits.
pub trait Vehicle: DynamicsModel {
    /// Registry identifier, e.g. `"accel_tt"`.
    fn id(&self) -> &'static str;

    /// Reference point used for goal tracking.
    fn position(&self, x: &State) -> [f64; 2];

    fn heading(&self, _x: &State) -> Option<f64> {
        None
    }

    fn body_poses(&self, x: &State) -> Bodies;

    /// Speed carried in the state. Zero for models whose velocity is an input.
    fn speed(&self, _x: &State) -> f64 {
        0.0
    }

    /// State speed cap enforced through the safety margin.
    fn speed_limit(&self) -> Option<f64> {
        None
    }

    /// Signed hitch angle `θ0 − θ1` wrapped to (−π, π].
    fn hitch_angle(&self, _x: &State) -> Option<f64> {
        None
    }

    fn jackknife_limit(&self) -> Option<f64> {
        None
    }

    /// Displacement bounds while braking to rest. Zero when the model stops
    /// instantly under a zero input.
    fn braking_envelope(&self, x: &State) -> BrakingEnvelope {
        BrakingEnvelope {
            discs: SmallVec::from_elem(0.0, self.body_poses(x).len()),
            hitch: 0.0,
        }
    }

    /// True when velocity is an input, so a zero control freezes the state.
    fn stops_instantly(&self) -> bool {
        false
    }

    /// Per-dimension sampling ranges covering the reachable state space.
    /// Velocity-like entries are limited to `speed_cap`.
    fn sampling_bounds(&self, world: &Aabb, speed_cap: f64) -> Vec<(f64, f64)>;
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Distance covered by the saturated dead-beat brake `a = −clamp(s/dt, ±decel)`
/// from speed `s` until rest, under exact zero-order-hold integration.
pub fn discrete_stopping_distance(speed: f64, decel: f64, dt: f64) -> f64 {
    let s = speed.abs();
    let q = decel * dt;
    if s == 0.0 {
        return 0.0;
    }
    let n = (s / q).floor();
    let rest = (s - n * q).max(0.0);
    n * dt * (s - 0.5 * q * n) + 0.5 * rest * dt
}

/// Classic fourth-order Runge–Kutta step for autonomous `ẋ = f(x)`.
pub(crate) fn rk4<const N: usize>(x: [f64; N], dt: f64, f: impl Fn(&[f64; N]) -> [f64; N]) -> [f64; N] {
    let add = |a: &[f64; N], k: &[f64; N], h: f64| {
        let mut out = *a;
        for i in 0..N {
            out[i] += h * k[i];
        }
        out
    };
    let k1 = f(&x);
    let k2 = f(&add(&x, &k1, 0.5 * dt));
    let k3 = f(&add(&x, &k2, 0.5 * dt));
    let k4 = f(&add(&x, &k3, dt));
    let mut out = x;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}
