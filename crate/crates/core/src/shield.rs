//! Shielded rollout.
//!
//! A nominal control is accepted at step `t` only if the state it leads to
//! admits a *valid* backup continuation: `T_B` steps of the backup policy that
//! stay in S and end in C. The first rejected step hands the rest of the
//! horizon to the backup policy. Starting from C, every state the shield emits
//! is therefore in S, and the continuation past the horizon stays in S too.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{SafeSet, Scenario};
use crate::error::{CoreError, Result};
use crate::systems::{AccelTractorTrailer, DoubleIntegrator2D};
use crate::trajectory::{
    clamp_control, rollout, Control, ControlSequence, DynamicsModel, Policy, State,
    StateTrajectory,
};

/// `π_backup(x) = π_inv(x)` on C, `π_rec(x)` elsewhere.
#[derive(Clone)]
pub struct BackupPolicy {
    pub invariance: Arc<dyn Policy>,
    pub recovery: Arc<dyn Policy>,
    /// Recovery budget `T_B` in steps.
    pub horizon: usize,
}

impl std::fmt::Debug for BackupPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackupPolicy").field("horizon", &self.horizon).finish_non_exhaustive()
    }
}

impl BackupPolicy {
    pub fn new(invariance: Arc<dyn Policy>, recovery: Arc<dyn Policy>, horizon: usize) -> Self {
        assert!(horizon >= 1, "backup horizon must be at least one step");
        Self {
            invariance,
            recovery,
            horizon,
        }
    }

    /// Zero input everywhere; valid when velocity is itself an input.
    pub fn stop_in_place(control_dim: usize, horizon: usize) -> Self {
        let zero: Arc<dyn Policy> = Arc::new(move |_: &State| Control::zeros(control_dim));
        Self::new(zero.clone(), zero, horizon)
    }

    /// Hold `u = −k_v·v` inside C, saturated dead-beat brake outside.
    pub fn double_integrator(model: &DoubleIntegrator2D, k_v: f64, horizon: usize) -> Self {
        let (a_max, dt) = (model.a_max, model.dt);
        let hold = move |x: &State| Control::new(&[-k_v * x[2], -k_v * x[3]]);
        let brake = move |x: &State| {
            let speed = x[2].hypot(x[3]);
            if speed == 0.0 {
                return Control::zeros(2);
            }
            let decel = (speed / dt).min(a_max);
            Control::new(&[-decel * x[2] / speed, -decel * x[3] / speed])
        };
        Self::new(Arc::new(hold), Arc::new(brake), horizon)
    }

    /// Hold `(a, ω) = (−k_v·v, −k_δ·δ)` inside C; outside, brake with
    /// `a = −clamp(v/dt, ±a_max)` while steering back toward zero.
    pub fn accel_tractor_trailer(model: &AccelTractorTrailer, k_v: f64, k_delta: f64, horizon: usize) -> Self {
        let (a_max, dt) = (model.a_max, model.dt);
        let hold = move |x: &State| Control::new(&[-k_v * x[4], -k_delta * x[5]]);
        let brake = move |x: &State| Control::new(&[-(x[4] / dt).clamp(-a_max, a_max), -k_delta * x[5]]);
        Self::new(Arc::new(hold), Arc::new(brake), horizon)
    }

    /// `ceil(v_max / (a_max·dt)) + slack`: worst-case stopping steps plus slack.
    pub fn braking_horizon(v_max: f64, a_max: f64, dt: f64, slack: usize) -> usize {
        (v_max / (a_max * dt)).ceil() as usize + slack
    }

    /// Selects the branch without checking that `x` is in S.
    pub fn select<S: SafeSet + ?Sized>(&self, x: &State, safe: &S) -> Control {
        if safe.in_invariant_set(x) {
            self.invariance.control(x)
        } else {
            self.recovery.control(x)
        }
    }
}

/// The backup control at `x`, clamped. The backup policy is only defined on S.
pub fn backup_control<M, S>(x: &State, policy: &BackupPolicy, model: &M, safe: &S) -> Result<Control>
where
    M: DynamicsModel + ?Sized,
    S: SafeSet + ?Sized,
{
    let g = safe.margin(x);
    if !(g <= 0.0) {
        return Err(CoreError::Contract(format!(
            "backup policy queried outside the safe set (g = {g})"
        )));
    }
    clamp_control(&policy.select(x, safe), model)
}

/// A backup continuation is valid when every state is in S and the last one
/// is in C.
pub fn is_valid<S: SafeSet + ?Sized>(traj: &StateTrajectory, horizon: usize, safe: &S) -> Result<bool> {
    if traj.len() != horizon + 1 {
        return Err(CoreError::Contract(format!(
            "validity check expects {} states, got {}",
            horizon + 1,
            traj.len()
        )));
    }
    if !traj.states.iter().all(|x| safe.in_safe_set(x)) {
        return Ok(false);
    }
    Ok(safe.in_invariant_set(traj.last()))
}

/// Simulates the backup continuation from `x` for `policy.horizon` steps and
/// applies the validity test without storing the states. Stops at the first
/// state outside S, and at a fixed point of the closed loop, after which
/// every remaining state repeats. An overflowing continuation is invalid.
pub fn continuation_is_valid<M, S>(x: &State, policy: &BackupPolicy, model: &M, safe: &S) -> Result<bool>
where
    M: DynamicsModel + ?Sized,
    S: SafeSet + ?Sized,
{
    let mut x = x.clone();
    for _ in 0..policy.horizon {
        let (in_s, in_c) = safe.classify(&x);
        if !in_s {
            return Ok(false);
        }
        let u = if in_c {
            policy.invariance.control(&x)
        } else {
            policy.recovery.control(&x)
        };
        let next = model.step(&x, &clamp_control(&u, model)?);
        if !next.is_finite() {
            return Ok(false);
        }
        if next.iter().zip(x.iter()).all(|(a, b)| a.to_bits() == b.to_bits()) {
            return Ok(in_c);
        }
        x = next;
    }
    let (in_s, in_c) = safe.classify(&x);
    Ok(in_s && in_c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShieldOutcome {
    pub states: StateTrajectory,
    pub controls: ControlSequence,
    /// First step driven by the backup policy, if any.
    pub fallback_index: Option<usize>,
    /// Number of backup continuations simulated.
    pub validity_checks: usize,
}

pub fn shielded_rollout<M, S>(
    x0: &State,
    nominal: &ControlSequence,
    policy: &BackupPolicy,
    model: &M,
    safe: &S,
) -> Result<ShieldOutcome>
where
    M: DynamicsModel + ?Sized,
    S: SafeSet + ?Sized,
{
    if nominal.is_empty() {
        return Err(CoreError::Contract("nominal control sequence must be non-empty".into()));
    }
    let g0 = safe.margin(x0);
    if !(g0 <= 0.0) {
        return Err(CoreError::UnsafeInitialState { margin: g0 });
    }
    let horizon = nominal.len();
    let backup = |x: &State| policy.select(x, safe);

    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    states.push(x0.clone());
    let mut x = x0.clone();
    let mut fallback_index = None;
    let mut validity_checks = 0;

    for t in 0..horizon {
        let u_nom = clamp_control(&nominal.controls[t], model)?;
        let x_hat = model.step(&x, &u_nom);
        if !x_hat.is_finite() {
            return Err(CoreError::NonFinite { step: t });
        }
        validity_checks += 1;
        let valid = continuation_is_valid(&x_hat, policy, model, safe)?;
        if valid {
            x = x_hat;
            states.push(x.clone());
            controls.push(u_nom);
            continue;
        }

        // fallback to backup
        fallback_index = Some(t);
        for t_fb in t..horizon {
            let u = clamp_control(&backup(&x), model)?;
            x = model.step(&x, &u);
            if !x.is_finite() {
                return Err(CoreError::NonFinite { step: t_fb });
            }
            states.push(x.clone());
            controls.push(u);
        }
        break;
    }

    Ok(ShieldOutcome {
        states: StateTrajectory { states },
        controls: ControlSequence::new(controls),
        fallback_index,
        validity_checks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub tested: usize,
    pub passed: usize,
    pub rate: f64,
    /// Up to five failing initial states.
    pub counterexamples: Vec<State>,
}

impl RateReport {
    fn from_outcomes(results: Vec<(State, bool)>) -> Self {
        let tested = results.len();
        let passed = results.iter().filter(|r| r.1).count();
        let counterexamples = results
            .into_iter()
            .filter(|r| !r.1)
            .map(|r| r.0)
            .take(5)
            .collect();
        Self {
            tested,
            passed,
            rate: if tested == 0 { 0.0 } else { passed as f64 / tested as f64 },
            counterexamples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub scenario: String,
    pub system: String,
    pub samples: usize,
    pub t_cert: usize,
    pub backup_horizon: usize,
    /// Sampled states in C whose invariance-policy rollout stays in C.
    pub invariance: RateReport,
    /// Sampled states in S whose backup rollout is valid.
    pub recovery: RateReport,
    pub certified: bool,
}

fn sample_states<F: Fn(&State) -> bool>(
    rng: &mut ChaCha8Rng,
    bounds: &[(f64, f64)],
    wanted: usize,
    set: &'static str,
    accept: F,
) -> Result<Vec<State>> {
    let budget = wanted.saturating_mul(1000).max(10_000);
    let mut out = Vec::with_capacity(wanted);
    let mut attempts = 0;
    while out.len() < wanted && attempts < budget {
        attempts += 1;
        let x: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| if lo < hi { rng.random_range(lo..=hi) } else { lo })
            .collect();
        let x = State::from(x);
        if accept(&x) {
            out.push(x);
        }
    }
    if out.len() < wanted {
        return Err(CoreError::SamplingExhausted {
            set,
            wanted,
            found: out.len(),
            attempts,
        });
    }
    Ok(out)
}

/// Monte-Carlo check of the invariance and recovery properties of `policy`
/// on `scenario`. Both rates must be exactly 1 for a certified configuration.
pub fn certify_backup(
    scenario: &Scenario,
    policy: &BackupPolicy,
    n_samples: usize,
    t_cert: usize,
    seed: u64,
) -> Result<CertificationReport> {
    if n_samples == 0 {
        return Err(CoreError::Config("certification needs at least one sample".into()));
    }
    let model = &*scenario.system;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let speed_cap = model.speed_limit().unwrap_or(0.0);
    let inv_bounds = model.sampling_bounds(&scenario.world, scenario.safety.v_eps.min(speed_cap));
    let in_c = sample_states(&mut rng, &inv_bounds, n_samples, "C", |x| scenario.in_invariant_set(x))?;
    let invariance = in_c
        .into_iter()
        .map(|x| {
            let ok = match rollout(&x, &*policy.invariance, t_cert, model) {
                Ok(tr) => tr.states.iter().all(|s| scenario.in_invariant_set(s)),
                Err(_) => false,
            };
            (x, ok)
        })
        .collect();

    let rec_bounds = model.sampling_bounds(&scenario.world, speed_cap);
    let in_s = sample_states(&mut rng, &rec_bounds, n_samples, "S", |x| scenario.in_safe_set(x))?;
    let backup = |x: &State| policy.select(x, scenario);
    let recovery = in_s
        .into_iter()
        .map(|x| {
            let ok = match rollout(&x, &backup, policy.horizon, model) {
                Ok(tr) => is_valid(&tr, policy.horizon, scenario).unwrap_or(false),
                Err(_) => false,
            };
            (x, ok)
        })
        .collect();

    let invariance = RateReport::from_outcomes(invariance);
    let recovery = RateReport::from_outcomes(recovery);
    Ok(CertificationReport {
        scenario: scenario.name.clone(),
        system: model.id().to_string(),
        samples: n_samples,
        t_cert,
        backup_horizon: policy.horizon,
        certified: invariance.rate == 1.0 && recovery.rate == 1.0,
        invariance,
        recovery,
    })
}
