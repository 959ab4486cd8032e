use smallvec::smallvec;

use super::{discrete_stopping_distance, Aabb, Bodies, BodyPose, BrakingEnvelope, Vehicle};
use crate::trajectory::{Control, DynamicsModel, State};

/// Planar point mass, state `(px, py, vx, vy)`, control `(ax, ay)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DoubleIntegrator2D {
    pub dt: f64,
    pub a_max: f64,
    /// Speed cap, enforced by the safety margin rather than by projection.
    pub v_max: f64,
    pub radius: f64,
    lower: [f64; 2],
    upper: [f64; 2],
}

impl DoubleIntegrator2D {
    pub fn new(dt: f64, a_max: f64, v_max: f64) -> Self {
        assert!(dt > 0.0 && a_max > 0.0 && v_max > 0.0);
        Self {
            dt,
            a_max,
            v_max,
            radius: 0.0,
            lower: [-a_max; 2],
            upper: [a_max; 2],
        }
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }
}

impl DynamicsModel for DoubleIntegrator2D {
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
        let dt = self.dt;
        let half = 0.5 * dt * dt;
        State::new(&[
            x[0] + x[2] * dt + half * u[0],
            x[1] + x[3] * dt + half * u[1],
            x[2] + u[0] * dt,
            x[3] + u[1] * dt,
        ])
    }
}

impl Vehicle for DoubleIntegrator2D {
    fn id(&self) -> &'static str {
        "double_integrator"
    }

    fn position(&self, x: &State) -> [f64; 2] {
        [x[0], x[1]]
    }

    fn body_poses(&self, x: &State) -> Bodies {
        smallvec![BodyPose {
            center: [x[0], x[1]],
            radius: self.radius,
        }]
    }

    fn speed(&self, x: &State) -> f64 {
        x[2].hypot(x[3])
    }

    fn speed_limit(&self) -> Option<f64> {
        Some(self.v_max)
    }

    fn braking_envelope(&self, x: &State) -> BrakingEnvelope {
        BrakingEnvelope {
            discs: smallvec![discrete_stopping_distance(self.speed(x), self.a_max, self.dt)],
            hitch: 0.0,
        }
    }

    fn sampling_bounds(&self, world: &Aabb, speed_cap: f64) -> Vec<(f64, f64)> {
        vec![
            (world.min[0], world.max[0]),
            (world.min[1], world.max[1]),
            (-speed_cap, speed_cap),
            (-speed_cap, speed_cap),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::clamp_control;
    use proptest::prelude::*;

    fn close(a: &State, b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn drift() {
        let m = DoubleIntegrator2D::new(0.1, 2.0, 5.0);
        let x = m.step(&State::new(&[0.0, 0.0, 1.0, 0.0]), &Control::new(&[0.0, 0.0]));
        assert!(close(&x, &[0.1, 0.0, 1.0, 0.0]));
    }

    #[test]
    fn constant_acceleration_from_rest() {
        let m = DoubleIntegrator2D::new(1.0, 2.0, 5.0);
        let x = m.step(&State::new(&[0.0, 0.0, 0.0, 0.0]), &Control::new(&[2.0, 0.0]));
        assert!(close(&x, &[1.0, 0.0, 2.0, 0.0]));
    }

    #[test]
    fn braking_through_zero() {
        let m = DoubleIntegrator2D::new(2.0, 2.0, 5.0);
        let x = m.step(&State::new(&[0.0, 0.0, 1.0, 0.0]), &Control::new(&[-1.0, 0.0]));
        assert!(close(&x, &[0.0, 0.0, -1.0, 0.0]));
    }

    #[test]
    fn single_disc_at_position() {
        let m = DoubleIntegrator2D::new(0.1, 2.0, 5.0).with_radius(0.5);
        let b = m.body_poses(&State::new(&[3.0, 4.0, 0.0, 0.0]));
        assert_eq!(b.len(), 1);
        assert_eq!(b[0], BodyPose { center: [3.0, 4.0], radius: 0.5 });
    }

    proptest! {
        #[test]
        fn opposite_inputs_from_rest_return_to_zero_velocity(ax in -3.0f64..3.0, ay in -3.0f64..3.0) {
            let m = DoubleIntegrator2D::new(0.1, 2.0, 5.0);
            let u = clamp_control(&Control::new(&[ax, ay]), &m).unwrap();
            let neg = Control::new(&[-u[0], -u[1]]);
            let x = m.step(&m.step(&State::new(&[0.0, 0.0, 0.0, 0.0]), &u), &neg);
            prop_assert!(x[2].abs() < 1e-15 && x[3].abs() < 1e-15);
        }
    }
}
