//! JSON-lines trial traces: one header, then cycle and step records in
//! execution order, then a summary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use safempd_core::diffusion::{CycleRecord, DiffusionParams};
use safempd_core::{Aabb, BodyPose, Control, Goal, Obstacle, State};

use crate::error::{HarnessError, Result};
use crate::trial::TrialResult;

pub const TRACE_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: u32,
    pub scenario: String,
    pub system: String,
    pub mode: String,
    pub seed: u64,
    pub start: State,
    pub goal: Goal,
    pub world: Aabb,
    pub obstacles: Vec<Obstacle>,
    pub params: DiffusionParams,
    pub backup_horizon: usize,
    pub exec_steps: usize,
    pub max_cycles: usize,
}

/// One executed state. `control` and `fallback` describe the transition
/// into this state and are absent for the initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub state: State,
    pub control: Option<Control>,
    pub fallback: bool,
    pub g: f64,
    pub jackknifed: bool,
    pub bodies: Vec<BodyPose>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceRecord {
    Header(TraceHeader),
    Cycle(CycleRecord),
    Step(StepRecord),
    Summary(TrialResult),
}

pub fn render_trace(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace records always serialize"));
        out.push('\n');
    }
    out
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<()> {
    std::fs::write(path, render_trace(records)).map_err(|e| HarnessError::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::Trace {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect::<Result<Vec<TraceRecord>>>()?;
    match records.first() {
        Some(TraceRecord::Header(_)) => Ok(records),
        _ => Err(HarnessError::Trace {
            path: path.to_path_buf(),
            message: "first record must be the header".into(),
        }),
    }
}
