use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use safempd_core::diffusion::{DiffusionParams, MpdResult, Planner, RngStream};
use safempd_core::registry::StrategyRegistry;
use safempd_core::SafeSet;

use crate::error::{HarnessError, Result};
use crate::generate::GeneratedSuite;
use crate::scenario_file::{LoadedScenario, ShieldSection};
use crate::trace::{write_trace, StepRecord, TraceHeader, TraceRecord, TRACE_SCHEMA};

/// Shield settings applied on top of every scenario's own.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShieldOverrides {
    pub tb: Option<usize>,
    pub c_margin: Option<f64>,
    pub v_eps: Option<f64>,
}

impl ShieldOverrides {
    pub fn apply(&self, shield: &mut ShieldSection) {
        if let Some(tb) = self.tb {
            shield.tb = Some(tb);
        }
        if let Some(c) = self.c_margin {
            shield.c_margin = c;
        }
        if let Some(v) = self.v_eps {
            shield.v_eps = v;
        }
    }
}

fn default_modes() -> Vec<String> {
    vec!["shielded".into()]
}

fn default_seed_count() -> u64 {
    20
}

fn default_exec_steps() -> usize {
    1
}

fn default_max_cycles() -> usize {
    100
}

/// Experiment description, read from a TOML file by `safempd bench`.
/// Scenario paths are relative to the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenarios: Vec<PathBuf>,
    #[serde(default)]
    pub generated: Vec<GeneratedSuite>,
    #[serde(default = "default_modes")]
    pub modes: Vec<String>,
    /// Explicit seeds; when absent, `0..seed_count`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_seed_count")]
    pub seed_count: u64,
    #[serde(default)]
    pub planner: DiffusionParams,
    #[serde(default)]
    pub shield: ShieldOverrides,
    #[serde(default = "default_exec_steps")]
    pub exec_steps: usize,
    #[serde(default = "default_max_cycles")]
    pub max_cycles: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenarios: Vec::new(),
            generated: Vec::new(),
            modes: default_modes(),
            seeds: None,
            seed_count: default_seed_count(),
            planner: DiffusionParams::default(),
            shield: ShieldOverrides::default(),
            exec_steps: default_exec_steps(),
            max_cycles: default_max_cycles(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut config: Self = toml::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut config.scenarios {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| (0..self.seed_count).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() && self.generated.is_empty() {
            return Err(HarnessError::Config("at least one scenario is required".into()));
        }
        if self.seed_list().is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        if self.modes.is_empty() {
            return Err(HarnessError::Config("at least one mode is required".into()));
        }
        if self.exec_steps == 0 {
            return Err(HarnessError::Config("exec_steps must be at least 1".into()));
        }
        let strategies = StrategyRegistry::builtin();
        for m in &self.modes {
            strategies.get(m).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        self.planner.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub scenario: String,
    pub system: String,
    pub mode: String,
    pub seed: u64,
    /// Goal reached within the cycle budget with no violation or jackknife.
    pub success: bool,
    pub reached_goal: bool,
    /// Executed states with `g > 0`.
    pub violation_count: usize,
    /// Executed states beyond the jackknife limit.
    pub jackknife_count: usize,
    /// Cost of the executed trajectory; absent when the planner failed.
    pub total_cost: Option<f64>,
    pub steps: usize,
    pub cycles: usize,
    /// Fraction of executed controls produced by the backup policy.
    pub fallback_rate: f64,
    /// Mean contributing-candidate fraction over all denoising levels.
    pub contributing_fraction: Option<f64>,
    pub error: Option<String>,
}

impl TrialResult {
    pub const COLUMNS: [&'static str; 14] = [
        "scenario",
        "system",
        "mode",
        "seed",
        "success",
        "reached_goal",
        "violation_count",
        "jackknife_count",
        "total_cost",
        "steps",
        "cycles",
        "fallback_rate",
        "contributing_fraction",
        "error",
    ];

    /// Result row for a trial that could not run.
    pub fn failed(scenario: &str, system: &str, mode: &str, seed: u64, error: String) -> Self {
        Self {
            scenario: scenario.into(),
            system: system.into(),
            mode: mode.into(),
            seed,
            success: false,
            reached_goal: false,
            violation_count: 0,
            jackknife_count: 0,
            total_cost: None,
            steps: 0,
            cycles: 0,
            fallback_rate: 0.0,
            contributing_fraction: None,
            error: Some(error),
        }
    }
}

/// Wall time of each planning cycle. Kept apart from the reproducible
/// outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    pub cycle_ms: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrialOutput {
    pub result: TrialResult,
    pub trace: Vec<TraceRecord>,
    pub timing: TrialTiming,
}

fn step_records(run: &MpdResult, loaded: &LoadedScenario) -> Vec<StepRecord> {
    let s = &loaded.scenario;
    run.states
        .states
        .iter()
        .enumerate()
        .map(|(t, x)| StepRecord {
            t,
            state: x.clone(),
            control: t.checked_sub(1).map(|i| run.controls.controls[i].clone()),
            fallback: t > 0 && run.fallback[t - 1],
            g: s.margin(x),
            jackknifed: s.is_jackknifed(x),
            bodies: s.system.body_poses(x).to_vec(),
        })
        .collect()
}

/// Builds the planner for `mode` and runs the receding-horizon loop.
/// Planner errors become a failed result; the trace then holds the header
/// and the summary only.
pub fn simulate_trial(config: &ExperimentConfig, loaded: &LoadedScenario, mode: &str, seed: u64) -> TrialOutput {
    let s = &loaded.scenario;
    let params = DiffusionParams {
        mode: mode.to_owned(),
        ..config.planner.clone()
    };
    let header = TraceRecord::Header(TraceHeader {
        schema: TRACE_SCHEMA,
        scenario: s.name.clone(),
        system: s.system.id().into(),
        mode: mode.into(),
        seed,
        start: s.start.clone(),
        goal: s.goal.clone(),
        world: s.world,
        obstacles: s.obstacles.clone(),
        params: params.clone(),
        backup_horizon: loaded.backup.horizon,
        exec_steps: config.exec_steps,
        max_cycles: config.max_cycles,
    });
    let mut timing = TrialTiming {
        scenario: s.name.clone(),
        mode: mode.into(),
        seed,
        cycle_ms: Vec::new(),
    };

    let run = StrategyRegistry::builtin()
        .get(mode)
        .and_then(|strategy| Planner::new(s.clone(), loaded.backup.clone(), params, strategy))
        .and_then(|planner| planner.mpd_plan(config.exec_steps, config.max_cycles, &RngStream::new(seed)));
    let run = match run {
        Ok(run) => run,
        Err(e) => {
            let result = TrialResult::failed(&s.name, s.system.id(), mode, seed, e.to_string());
            let trace = vec![header, TraceRecord::Summary(result.clone())];
            return TrialOutput { result, trace, timing };
        }
    };

    let steps = step_records(&run, loaded);
    let violation_count = steps.iter().filter(|r| r.g > 0.0).count();
    let jackknife_count = steps.iter().filter(|r| r.jackknifed).count();
    let executed = run.controls.len();
    let fallback_rate = if executed == 0 {
        0.0
    } else {
        run.fallback.iter().filter(|f| **f).count() as f64 / executed as f64
    };
    let fractions: Vec<f64> = run
        .cycles
        .iter()
        .flat_map(|c| c.diagnostics.levels.iter().map(|l| l.contributing_fraction))
        .collect();
    let contributing_fraction = (!fractions.is_empty()).then(|| fractions.iter().sum::<f64>() / fractions.len() as f64);
    let result = TrialResult {
        scenario: s.name.clone(),
        system: s.system.id().into(),
        mode: mode.into(),
        seed,
        success: run.success && violation_count == 0 && jackknife_count == 0,
        reached_goal: run.success,
        violation_count,
        jackknife_count,
        total_cost: Some(run.cost),
        steps: executed,
        cycles: run.cycles.len(),
        fallback_rate,
        contributing_fraction,
        error: None,
    };
    timing.cycle_ms = run.cycles.iter().map(|c| c.wall_ms).collect();

    // cycles and steps interleaved in execution order
    let mut trace = vec![header];
    let mut steps = steps.into_iter().peekable();
    if let Some(first) = steps.next() {
        trace.push(TraceRecord::Step(first));
    }
    for c in run.cycles {
        let until = run
            .states
            .len()
            .min(c.step + config.exec_steps + 1);
        trace.push(TraceRecord::Cycle(c));
        while let Some(r) = steps.next_if(|r| r.t < until) {
            trace.push(TraceRecord::Step(r));
        }
    }
    trace.extend(steps.map(TraceRecord::Step));
    trace.push(TraceRecord::Summary(result.clone()));
    TrialOutput { result, trace, timing }
}

/// Runs one trial and writes its trace to `trace_path`.
pub fn run_trial(
    config: &ExperimentConfig,
    loaded: &LoadedScenario,
    mode: &str,
    seed: u64,
    trace_path: &Path,
) -> Result<(TrialResult, TrialTiming)> {
    let out = simulate_trial(config, loaded, mode, seed);
    write_trace(trace_path, &out.trace)?;
    Ok((out.result, out.timing))
}
