//! Model-based diffusion over control sequences and the receding-horizon
//! planner built on it.
//!
//! Control sequences are denoised in normalized units: entry `y` maps to
//! `mid + half·y` of the model's control box.

mod denoise;
mod rng;
mod schedule;
mod strategy;

pub use denoise::{
    estimate_temperature, evaluate_candidates, reverse_step, sample_candidates, softmax_weights, standard_normal,
    ControlScaling, DenoiseDiagnostics, DenoiseResult, DenoiseState, LevelDiagnostics, ARGMIN_TEMPERATURE,
};
pub use rng::RngStream;
pub use schedule::{forward_noise, make_noise_schedule, NoiseSchedule};
pub use strategy::{CandidateEval, CandidateStrategy, EvalContext, Filtered, Penalty, Shielded, Vanilla};

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::environment::{trajectory_cost, Scenario};
use crate::error::{CoreError, Result};
use crate::shield::{BackupPolicy, ShieldOutcome};
use crate::trajectory::{clamp_control, Control, ControlSequence, State, StateTrajectory};
use denoise::{run_denoise, DenoiseSetup};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionParams {
    /// Candidates per level.
    #[serde(rename = "K")]
    pub candidates: usize,
    /// Denoising levels.
    #[serde(rename = "N")]
    pub levels: usize,
    /// Softmax temperature in cost units. When absent, each level uses
    /// `0.1 ·` the standard deviation of its contributing costs.
    pub lambda: Option<f64>,
    pub sigma_scale: f64,
    pub mode: String,
    pub penalty_weight: f64,
    /// Planning horizon `T` in steps.
    pub horizon: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Re-noise level for warm starts; defaults to `ceil(N/2)`.
    pub warm_level: Option<usize>,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        Self {
            candidates: 128,
            levels: 30,
            lambda: None,
            sigma_scale: 1.0,
            mode: "shielded".into(),
            penalty_weight: 100.0,
            horizon: 50,
            beta_min: 1e-4,
            beta_max: 0.05,
            warm_level: None,
        }
    }
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.candidates == 0 {
            return bad("K must be at least 1".into());
        }
        if self.levels == 0 {
            return bad("N must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0) {
                return bad(format!("lambda must be positive, got {l}"));
            }
        }
        if !(self.sigma_scale >= 0.0 && self.sigma_scale.is_finite()) {
            return bad(format!("sigma_scale must be non-negative, got {}", self.sigma_scale));
        }
        if !(self.penalty_weight >= 0.0) {
            return bad(format!("penalty_weight must be non-negative, got {}", self.penalty_weight));
        }
        let warm = self.warm_level();
        if warm == 0 || warm > self.levels {
            return bad(format!("warm_level must lie in 1..={}, got {warm}", self.levels));
        }
        Ok(())
    }

    pub fn warm_level(&self) -> usize {
        self.warm_level.unwrap_or(self.levels.div_ceil(2))
    }
}

/// One receding-horizon cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    /// Executed steps before this cycle.
    pub step: usize,
    pub x0: State,
    pub plan_cost: f64,
    pub fallback_index: Option<usize>,
    pub diagnostics: DenoiseDiagnostics,
    /// Wall time of the denoising call in milliseconds. Not reproducible.
    #[serde(skip)]
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpdResult {
    pub success: bool,
    /// Executed states, starting with the initial state.
    pub states: StateTrajectory,
    pub controls: ControlSequence,
    /// Per executed control, whether the shield's backup produced it.
    pub fallback: Vec<bool>,
    pub cycles: Vec<CycleRecord>,
    pub cost: f64,
}

/// Scenario, backup policy, parameters and candidate strategy bundled into a
/// reusable planner.
pub struct Planner {
    pub scenario: Scenario,
    pub backup: BackupPolicy,
    pub params: DiffusionParams,
    pub strategy: Arc<dyn CandidateStrategy>,
    schedule: NoiseSchedule,
    scaling: ControlScaling,
}

/// Child index used for the initial estimate of a denoising pass; levels
/// use indices `1..=N`.
const INIT_STREAM: u64 = 0;

impl Planner {
    pub fn new(
        scenario: Scenario,
        backup: BackupPolicy,
        params: DiffusionParams,
        strategy: Arc<dyn CandidateStrategy>,
    ) -> Result<Self> {
        params.validate()?;
        let schedule = make_noise_schedule(params.levels, params.beta_min, params.beta_max)?;
        let scaling = ControlScaling::for_model(&*scenario.system);
        Ok(Self {
            scenario,
            backup,
            params,
            strategy,
            schedule,
            scaling,
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn scaling(&self) -> &ControlScaling {
        &self.scaling
    }

    fn setup(&self) -> DenoiseSetup<'_> {
        DenoiseSetup {
            schedule: &self.schedule,
            strategy: &*self.strategy,
            ctx: EvalContext {
                scenario: &self.scenario,
                backup: &self.backup,
                penalty_weight: self.params.penalty_weight,
            },
            scaling: &self.scaling,
            candidates: self.params.candidates,
            sigma_scale: self.params.sigma_scale,
            lambda: self.params.lambda,
        }
    }

    /// Full denoising pass from `Y_N ~ N(0, I)`.
    pub fn denoise(&self, x0: &State, rng: &RngStream) -> Result<DenoiseResult> {
        let y = standard_normal(self.params.horizon, self.scenario.system.control_dim(), &rng.child(INIT_STREAM));
        self.denoise_from(x0, y, self.params.levels, rng)
    }

    /// Denoising pass from a given estimate `y` at `level`.
    pub fn denoise_from(&self, x0: &State, y: ControlSequence, level: usize, rng: &RngStream) -> Result<DenoiseResult> {
        if level > self.params.levels || y.len() != self.params.horizon {
            return Err(CoreError::Contract(format!(
                "warm start must have {} steps at a level in 0..={}",
                self.params.horizon, self.params.levels
            )));
        }
        let start = DenoiseState { y, level, best: None };
        run_denoise(x0, start, &self.setup(), rng)
    }

    /// Shifts a plan left by `shift` steps, pads it with backup controls
    /// continued from the plan's final state, and normalizes the result.
    pub fn warm_start(&self, plan: &ShieldOutcome, shift: usize) -> Result<ControlSequence> {
        let model = &*self.scenario.system;
        let shift = shift.min(plan.controls.len());
        let mut controls: Vec<Control> = plan.controls.controls[shift..].to_vec();
        let mut x = plan.states.last().clone();
        for _ in 0..shift {
            let u = clamp_control(&self.backup.select(&x, &self.scenario), model)?;
            x = model.step(&x, &u);
            controls.push(u);
        }
        Ok(self.scaling.to_normalized(&ControlSequence::new(controls)))
    }

    /// Receding-horizon loop: plan, execute `exec_steps` controls, warm-start
    /// the next cycle, until the goal is reached or `max_cycles` run out.
    pub fn mpd_plan(&self, exec_steps: usize, max_cycles: usize, rng: &RngStream) -> Result<MpdResult> {
        if exec_steps == 0 {
            return Err(CoreError::Config("exec_steps must be at least 1".into()));
        }
        let model = &*self.scenario.system;
        let mut x = self.scenario.start.clone();
        let mut states = vec![x.clone()];
        let mut controls = Vec::new();
        let mut fallback = Vec::new();
        let mut cycles = Vec::new();
        let mut reached = self.scenario.goal_reached(&x);
        let mut warm: Option<ControlSequence> = None;

        for cycle in 0..max_cycles {
            if reached {
                break;
            }
            let crng = rng.child(cycle as u64);
            let timer = Instant::now();
            let plan = match warm.take() {
                None => self.denoise(&x, &crng)?,
                Some(y0) => {
                    let level = self.params.warm_level();
                    let y = forward_noise(&y0, level, &self.schedule, &crng.child(INIT_STREAM));
                    self.denoise_from(&x, y, level, &crng)?
                }
            };
            let wall_ms = timer.elapsed().as_secs_f64() * 1e3;
            cycles.push(CycleRecord {
                cycle,
                step: controls.len(),
                x0: x.clone(),
                plan_cost: plan.cost,
                fallback_index: plan.outcome.fallback_index,
                diagnostics: plan.diagnostics.clone(),
                wall_ms,
            });

            let run = exec_steps.min(plan.controls.len());
            for j in 0..run {
                let u = clamp_control(&plan.controls.controls[j], model)?;
                x = model.step(&x, &u);
                if !x.is_finite() {
                    return Err(CoreError::NonFinite { step: controls.len() });
                }
                fallback.push(plan.outcome.fallback_index.is_some_and(|f| j >= f));
                controls.push(u);
                states.push(x.clone());
                reached = self.scenario.goal_reached(&x);
                if reached {
                    break;
                }
            }
            warm = Some(self.warm_start(&plan.outcome, run)?);
        }

        let states = StateTrajectory { states };
        let controls = ControlSequence::new(controls);
        let cost = trajectory_cost(&states, &controls, &self.scenario)?;
        Ok(MpdResult {
            success: reached,
            states,
            controls,
            fallback,
            cycles,
            cost,
        })
    }
}
