//! Single-trailer truck with on-axle hitching.
//!
//! The tractor reference point is the rear axle `(px, py)`; the trailer axle
//! sits `hitch_length` behind it along the trailer heading. Both variants
//! integrate
//!
//! ```text
//! ẋ = v cos θ0,  ẏ = v sin θ0,  θ̇0 = (v / L) tan δ,  θ̇1 = (v / d) sin(θ0 − θ1)
//! ```
//!
//! with one RK4 step per sampling period.

use std::f64::consts::PI;

use smallvec::smallvec;

use super::{discrete_stopping_distance, rk4, wrap_angle, Aabb, Bodies, BodyPose, BrakingEnvelope, Vehicle};
use crate::trajectory::{Control, DynamicsModel, State};

#[derive(Clone, Debug, PartialEq)]
pub struct TrailerGeometry {
    /// Tractor wheelbase `L` in meters.
    pub wheelbase: f64,
    /// Hitch to trailer axle `d` in meters.
    pub hitch_length: f64,
    pub v_max: f64,
    pub delta_max: f64,
    /// Hitch angle beyond which the rig counts as jackknifed.
    pub jackknife_limit: f64,
    pub tractor_radius: f64,
    pub trailer_radius: f64,
}

impl Default for TrailerGeometry {
    fn default() -> Self {
        Self {
            wheelbase: 1.0,
            hitch_length: 1.5,
            v_max: 2.0,
            delta_max: 0.6,
            jackknife_limit: PI / 3.0,
            tractor_radius: 0.6,
            trailer_radius: 0.6,
        }
    }
}

impl TrailerGeometry {
    fn bodies(&self, x: &State) -> Bodies {
        let (s1, c1) = x[3].sin_cos();
        smallvec![
            BodyPose {
                center: [x[0], x[1]],
                radius: self.tractor_radius,
            },
            BodyPose {
                center: [x[0] - self.hitch_length * c1, x[1] - self.hitch_length * s1],
                radius: self.trailer_radius,
            },
        ]
    }

    fn validate(&self) {
        assert!(self.wheelbase > 0.0 && self.hitch_length > 0.0);
        assert!(self.v_max > 0.0 && self.delta_max > 0.0 && self.delta_max < PI / 2.0);
    }
}

#[inline]
fn kinematics(geo: &TrailerGeometry, s: &[f64], v: f64, tan_delta: f64) -> [f64; 4] {
    let (sin0, cos0) = s[2].sin_cos();
    [
        v * cos0,
        v * sin0,
        v / geo.wheelbase * tan_delta,
        v / geo.hitch_length * (s[2] - s[3]).sin(),
    ]
}

/// Velocity-and-steering controlled rig; state `(px, py, θ0, θ1)`, control `(v, δ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicTractorTrailer {
    pub dt: f64,
    pub geometry: TrailerGeometry,
    lower: [f64; 2],
    upper: [f64; 2],
}

impl KinematicTractorTrailer {
    pub fn new(dt: f64, geometry: TrailerGeometry) -> Self {
        assert!(dt > 0.0);
        geometry.validate();
        Self {
            dt,
            lower: [-geometry.v_max, -geometry.delta_max],
            upper: [geometry.v_max, geometry.delta_max],
            geometry,
        }
    }
}

impl DynamicsModel for KinematicTractorTrailer {
    fn state_dim(&self) -> usize {
        4
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn control_lower(&self) -> &[f64] {
        &self.lower
    }
    fn control_upper(&self) -> &[f64] {
        &self.upper
    }

    fn step(&self, x: &State, u: &Control) -> State {
        let v = u[0];
        if v == 0.0 {
            return x.clone();
        }
        let tan_delta = u[1].tan();
        let geo = &self.geometry;
        let out = rk4([x[0], x[1], x[2], x[3]], self.dt, |s| kinematics(geo, s, v, tan_delta));
        State::new(&[out[0], out[1], wrap_angle(out[2]), wrap_angle(out[3])])
    }
}

impl Vehicle for KinematicTractorTrailer {
    fn id(&self) -> &'static str {
        "kinematic_tt"
    }
    fn position(&self, x: &State) -> [f64; 2] {
        [x[0], x[1]]
    }
    fn heading(&self, x: &State) -> Option<f64> {
        Some(x[2])
    }
    fn body_poses(&self, x: &State) -> Bodies {
        self.geometry.bodies(x)
    }
    fn hitch_angle(&self, x: &State) -> Option<f64> {
        Some(wrap_angle(x[2] - x[3]))
    }
    fn jackknife_limit(&self) -> Option<f64> {
        Some(self.geometry.jackknife_limit)
    }
    fn stops_instantly(&self) -> bool {
        true
    }
    fn sampling_bounds(&self, world: &Aabb, _speed_cap: f64) -> Vec<(f64, f64)> {
        vec![
            (world.min[0], world.max[0]),
            (world.min[1], world.max[1]),
            (-PI, PI),
            (-PI, PI),
        ]
    }
}

/// Acceleration and steering-rate controlled rig; state
/// `(px, py, θ0, θ1, v, δ)`, control `(a, ω)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AccelTractorTrailer {
    pub dt: f64,
    pub geometry: TrailerGeometry,
    pub a_max: f64,
    pub omega_max: f64,
    lower: [f64; 2],
    upper: [f64; 2],
}

impl AccelTractorTrailer {
    pub fn new(dt: f64, geometry: TrailerGeometry, a_max: f64, omega_max: f64) -> Self {
        assert!(dt > 0.0 && a_max > 0.0 && omega_max > 0.0);
        geometry.validate();
        Self {
            dt,
            geometry,
            a_max,
            omega_max,
            lower: [-a_max, -omega_max],
            upper: [a_max, omega_max],
        }
    }
}

impl DynamicsModel for AccelTractorTrailer {
    fn state_dim(&self) -> usize {
        6
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn control_lower(&self) -> &[f64] {
        &self.lower
    }
    fn control_upper(&self) -> &[f64] {
        &self.upper
    }

    fn step(&self, x: &State, u: &Control) -> State {
        if x[4] == 0.0 && u[0] == 0.0 && u[1] == 0.0 {
            return x.clone();
        }
        let (a, w) = (u[0], u[1]);
        let geo = &self.geometry;
        let out = rk4([x[0], x[1], x[2], x[3], x[4], x[5]], self.dt, |s| {
            let k = kinematics(geo, s, s[4], s[5].tan());
            [k[0], k[1], k[2], k[3], a, w]
        });
        State::new(&[
            out[0],
            out[1],
            wrap_angle(out[2]),
            wrap_angle(out[3]),
            out[4].clamp(-geo.v_max, geo.v_max),
            out[5].clamp(-geo.delta_max, geo.delta_max),
        ])
    }
}

impl Vehicle for AccelTractorTrailer {
    fn id(&self) -> &'static str {
        "accel_tt"
    }
    fn position(&self, x: &State) -> [f64; 2] {
        [x[0], x[1]]
    }
    fn heading(&self, x: &State) -> Option<f64> {
        Some(x[2])
    }
    fn body_poses(&self, x: &State) -> Bodies {
        self.geometry.bodies(x)
    }
    fn speed(&self, x: &State) -> f64 {
        x[4].abs()
    }
    fn speed_limit(&self) -> Option<f64> {
        Some(self.geometry.v_max)
    }
    fn hitch_angle(&self, x: &State) -> Option<f64> {
        Some(wrap_angle(x[2] - x[3]))
    }
    fn jackknife_limit(&self) -> Option<f64> {
        Some(self.geometry.jackknife_limit)
    }

    /// Both axles move at most the braking arc length `s` (the trailer axle
    /// travels at `|v cos φ|`). Braking never reverses the direction of travel
    /// and never increases `|δ|`, so the hitch angle can grow by at most
    /// `s·tan|δ|/L` going forward; in reverse the trailer term adds `s/d`.
    fn braking_envelope(&self, x: &State) -> BrakingEnvelope {
        let s = discrete_stopping_distance(x[4], self.a_max, self.dt);
        let geo = &self.geometry;
        let mut rate = x[5].abs().tan() / geo.wheelbase;
        if x[4] < 0.0 {
            rate += 1.0 / geo.hitch_length;
        }
        BrakingEnvelope {
            discs: smallvec![s, s],
            hitch: s * rate,
        }
    }

    fn sampling_bounds(&self, world: &Aabb, speed_cap: f64) -> Vec<(f64, f64)> {
        let v = speed_cap.min(self.geometry.v_max);
        vec![
            (world.min[0], world.max[0]),
            (world.min[1], world.max[1]),
            (-PI, PI),
            (-PI, PI),
            (-v, v),
            (-self.geometry.delta_max, self.geometry.delta_max),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{clamp_control, rollout_controls, ControlSequence};
    use proptest::prelude::*;

    fn kin(dt: f64, wheelbase: f64, hitch: f64) -> KinematicTractorTrailer {
        KinematicTractorTrailer::new(
            dt,
            TrailerGeometry {
                wheelbase,
                hitch_length: hitch,
                delta_max: 1.0,
                ..TrailerGeometry::default()
            },
        )
    }

    #[test]
    fn straight_line_motion() {
        let m = kin(0.1, 1.0, 1.5);
        let x = m.step(&State::new(&[0.0, 0.0, 0.0, 0.0]), &Control::new(&[1.0, 0.0]));
        assert!((x[0] - 0.1).abs() < 1e-15);
        assert_eq!((x[1], x[2], x[3]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn zero_velocity_freezes() {
        let m = kin(0.1, 1.0, 1.5);
        let x0 = State::new(&[1.0, 2.0, 0.4, -0.2]);
        for delta in [-0.5, 0.0, 0.9] {
            assert_eq!(m.step(&x0, &Control::new(&[0.0, delta])), x0);
        }
    }

    /// Explicit Euler with fine substeps as an independent reference.
    fn euler_oracle(x: [f64; 4], v: f64, delta: f64, l: f64, d: f64, t: f64, sub: usize) -> [f64; 4] {
        let h = t / sub as f64;
        let mut s = x;
        for _ in 0..sub {
            let ds = [
                v * s[2].cos(),
                v * s[2].sin(),
                v / l * delta.tan(),
                v / d * (s[2] - s[3]).sin(),
            ];
            for i in 0..4 {
                s[i] += h * ds[i];
            }
        }
        s
    }

    #[test]
    fn unit_curvature_arc_matches_fine_euler() {
        let m = kin(0.01, 1.0, 1.0);
        let u = Control::new(&[1.0, 1f64.atan()]);
        let mut x = State::new(&[0.0, 0.0, 0.0, 0.0]);
        for _ in 0..100 {
            x = m.step(&x, &u);
        }
        assert!((x[2] - 1.0).abs() < 1e-9, "heading {}", x[2]);
        // Euler's global error is O(h); 1e4 substeps per RK4 step drives it
        // below 1e-6 over this 1 s arc.
        let mut e = [0.0; 4];
        for _ in 0..100 {
            e = euler_oracle(e, 1.0, 1f64.atan(), 1.0, 1.0, 0.01, 10_000);
        }
        for i in 0..4 {
            assert!((x[i] - e[i]).abs() <= 1e-6, "component {i}: {} vs {}", x[i], e[i]);
        }
    }

    #[test]
    fn trailer_disc_offsets() {
        let m = kin(0.1, 1.0, 2.0);
        let b = m.body_poses(&State::new(&[0.0, 0.0, 0.0, 0.0]));
        assert_eq!(b[1].center, [-2.0, 0.0]);
        let b = m.body_poses(&State::new(&[0.0, 0.0, 0.0, PI / 2.0]));
        assert!(b[1].center[0].abs() < 1e-15 && (b[1].center[1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn accel_equilibrium_and_deceleration() {
        let m = AccelTractorTrailer::new(1.0, TrailerGeometry::default(), 2.0, 1.0);
        let x0 = State::new(&[1.0, -1.0, 0.3, 0.2, 0.0, 0.1]);
        assert_eq!(m.step(&x0, &Control::new(&[0.0, 0.0])), x0);
        let x = m.step(&State::new(&[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]), &Control::new(&[-1.0, 0.0]));
        assert_eq!(x[4], 0.0);
        assert!((x[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rk4_local_error_shrinks_fifth_order() {
        // One step of size h against a 4096-substep RK4 reference.
        let geo = TrailerGeometry::default();
        let x0 = [0.0, 0.0, 0.3, -0.1];
        let (v, delta) = (1.5, 0.4);
        let reference = |h: f64| {
            let m = KinematicTractorTrailer::new(h / 4096.0, geo.clone());
            let mut x = State::new(&x0);
            for _ in 0..4096 {
                x = m.step(&x, &Control::new(&[v, delta]));
            }
            x
        };
        let err = |h: f64| {
            let m = KinematicTractorTrailer::new(h, geo.clone());
            let one = m.step(&State::new(&x0), &Control::new(&[v, delta]));
            let r = reference(h);
            one.iter().zip(r.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let ratio = err(0.4) / err(0.2);
        assert!(ratio >= 16.0, "ratio {ratio}");
    }

    proptest! {
        #[test]
        fn straight_rig_keeps_hitch_angle(theta in -3.0f64..3.0, v in -2.0f64..2.0, n in 1usize..60) {
            let m = kin(0.1, 1.0, 1.5);
            let x0 = State::new(&[0.0, 0.0, theta, theta]);
            let tr = rollout_controls(&x0, &ControlSequence::new(vec![Control::new(&[v, 0.0]); n]), &m).unwrap();
            for s in &tr.states {
                prop_assert!(m.hitch_angle(s).unwrap().abs() < 1e-9);
            }
        }

        #[test]
        fn headings_stay_wrapped(
            x in prop::array::uniform4(-3.1f64..3.1),
            u in prop::collection::vec((-5.0f64..5.0, -1.0f64..1.0), 1..50),
        ) {
            let m = kin(0.1, 1.0, 1.5);
            let seq = ControlSequence::new(u.iter().map(|&(v, d)| Control::new(&[v, d])).collect());
            let tr = rollout_controls(&State::from(x), &seq, &m).unwrap();
            for s in &tr.states[1..] {
                prop_assert!(s[2] > -PI && s[2] <= PI && s[3] > -PI && s[3] <= PI);
            }
        }
    }

    #[test]
    fn accel_state_bounds_hold_on_random_samples() {
        use rand::{Rng, SeedableRng};
        let m = AccelTractorTrailer::new(0.1, TrailerGeometry::default(), 2.0, 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let g = &m.geometry;
        for _ in 0..10_000 {
            let x = State::new(&[
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
                rng.random_range(-g.v_max..=g.v_max),
                rng.random_range(-g.delta_max..=g.delta_max),
            ]);
            let u = clamp_control(&Control::new(&[rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0)]), &m).unwrap();
            let y = m.step(&x, &u);
            assert!(y[4].abs() <= g.v_max && y[5].abs() <= g.delta_max);
        }
    }
}
