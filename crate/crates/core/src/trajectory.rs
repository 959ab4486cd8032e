//! State and control containers, the discrete-time dynamics contract and the
//! rollout primitives the rest of the crate is built on.

use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{CoreError, Result};

/// A system state `x_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(pub SmallVec<[f64; 6]>);

/// A control input `u_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Control(pub SmallVec<[f64; 2]>);

macro_rules! vector_newtype {
    ($name:ident, $inline:literal) => {
        impl $name {
            pub fn new(values: &[f64]) -> Self {
                Self(SmallVec::from_slice(values))
            }

            pub fn zeros(dim: usize) -> Self {
                Self(SmallVec::from_elem(0.0, dim))
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(SmallVec::from_vec(v))
            }
        }

        impl<const N: usize> From<[f64; N]> for $name {
            fn from(v: [f64; N]) -> Self {
                Self(SmallVec::from_slice(&v))
            }
        }
    };
}

vector_newtype!(State, 6);
vector_newtype!(Control, 2);

/// Open-loop control sequence `τ_u` over the planning horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence {
    pub controls: Vec<Control>,
}

impl ControlSequence {
    pub fn new(controls: Vec<Control>) -> Self {
        Self { controls }
    }

    pub fn zeros(horizon: usize, control_dim: usize) -> Self {
        Self {
            controls: vec![Control::zeros(control_dim); horizon],
        }
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn control_dim(&self) -> usize {
        self.controls.first().map_or(0, |c| c.len())
    }

    /// Row-major flattening (`T * m` entries).
    pub fn to_flat(&self) -> Vec<f64> {
        self.controls.iter().flat_map(|c| c.iter().copied()).collect()
    }

    pub fn from_flat(flat: &[f64], control_dim: usize) -> Self {
        assert!(control_dim > 0 && flat.len().is_multiple_of(control_dim));
        Self {
            controls: flat.chunks(control_dim).map(Control::new).collect(),
        }
    }
}

/// Dense state trajectory `τ_x`; index 0 is the initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateTrajectory {
    pub states: Vec<State>,
}

impl StateTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory holds at least the initial state")
    }
}

/// Discrete-time transition `x_{t+1} = f(x_t, u_t)` with box control bounds.
pub trait DynamicsModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Sampling period in seconds.
    fn dt(&self) -> f64;
    fn control_lower(&self) -> &[f64];
    fn control_upper(&self) -> &[f64];
    /// One transition. Callers pass controls that are already clamped.
    fn step(&self, x: &State, u: &Control) -> State;
}

/// State feedback law `π: X -> U`.
pub trait Policy: Send + Sync {
    fn control(&self, x: &State) -> Control;
}

impl<F> Policy for F
where
    F: Fn(&State) -> Control + Send + Sync,
{
    fn control(&self, x: &State) -> Control {
        self(x)
    }
}

fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(CoreError::Dimension {
            what,
            expected,
            found,
        })
    }
}

/// Saturates every entry of `u` into the model's control box.
pub fn clamp_control<M: DynamicsModel + ?Sized>(u: &Control, model: &M) -> Result<Control> {
    check_dim("control", model.control_dim(), u.len())?;
    let lo = model.control_lower();
    let hi = model.control_upper();
    let mut out = u.clone();
    for (j, v) in out.iter_mut().enumerate() {
        *v = v.clamp(lo[j], hi[j]);
    }
    Ok(out)
}

/// Closed-loop rollout of `policy` for `horizon` steps (`horizon` model
/// evaluations, `horizon + 1` states).
pub fn rollout<M, P>(
    x0: &State,
    policy: &P,
    horizon: usize,
    model: &M,
) -> Result<StateTrajectory>
where
    M: DynamicsModel + ?Sized,
    P: Policy + ?Sized,
{
    check_dim("initial state", model.state_dim(), x0.len())?;
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(x0.clone());
    let mut x = x0.clone();
    for t in 0..horizon {
        let u = clamp_control(&policy.control(&x), model)?;
        x = model.step(&x, &u);
        if !x.is_finite() {
            return Err(CoreError::NonFinite { step: t });
        }
        states.push(x.clone());
    }
    Ok(StateTrajectory { states })
}

/// Open-loop rollout of a control sequence.
pub fn rollout_controls<M: DynamicsModel + ?Sized>(
    x0: &State,
    seq: &ControlSequence,
    model: &M,
) -> Result<StateTrajectory> {
    if seq.is_empty() {
        return Err(CoreError::Contract("control sequence must be non-empty".into()));
    }
    check_dim("initial state", model.state_dim(), x0.len())?;
    let mut states = Vec::with_capacity(seq.len() + 1);
    states.push(x0.clone());
    let mut x = x0.clone();
    for (t, u) in seq.controls.iter().enumerate() {
        let u = clamp_control(u, model)?;
        x = model.step(&x, &u);
        if !x.is_finite() {
            return Err(CoreError::NonFinite { step: t });
        }
        states.push(x.clone());
    }
    Ok(StateTrajectory { states })
}

/// Wraps a model and counts calls to `step`.
pub struct CountingModel<'a, M: ?Sized> {
    inner: &'a M,
    steps: AtomicUsize,
}

impl<'a, M: DynamicsModel + ?Sized> CountingModel<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Self {
            inner,
            steps: AtomicUsize::new(0),
        }
    }

    pub fn steps(&self) -> usize {
        self.steps.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.steps.store(0, Ordering::Relaxed);
    }
}

impl<M: DynamicsModel + ?Sized> DynamicsModel for CountingModel<'_, M> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }
    fn dt(&self) -> f64 {
        self.inner.dt()
    }
    fn control_lower(&self) -> &[f64] {
        self.inner.control_lower()
    }
    fn control_upper(&self) -> &[f64] {
        self.inner.control_upper()
    }
    fn step(&self, x: &State, u: &Control) -> State {
        self.steps.fetch_add(1, Ordering::Relaxed);
        self.inner.step(x, u)
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// `x' = x + u·dt` in one dimension with bounds `[-bound, bound]`.
    pub struct SingleIntegrator {
        pub dt: f64,
        pub lo: [f64; 1],
        pub hi: [f64; 1],
    }

    impl SingleIntegrator {
        pub fn new(dt: f64, bound: f64) -> Self {
            Self {
                dt,
                lo: [-bound],
                hi: [bound],
            }
        }
    }

    impl DynamicsModel for SingleIntegrator {
        fn state_dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn dt(&self) -> f64 {
            self.dt
        }
        fn control_lower(&self) -> &[f64] {
            &self.lo
        }
        fn control_upper(&self) -> &[f64] {
            &self.hi
        }
        fn step(&self, x: &State, u: &Control) -> State {
            State::new(&[x[0] + u[0] * self.dt])
        }
    }
}
