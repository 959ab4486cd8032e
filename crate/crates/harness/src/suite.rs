use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use safempd_core::registry::SystemRegistry;

use crate::error::{HarnessError, Result};
use crate::scenario_file::ScenarioFile;
use crate::trial::{run_trial, ExperimentConfig, TrialResult, TrialTiming};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

/// Rows with a fixed column order.
pub trait Tabular: Serialize + DeserializeOwned {
    fn columns() -> &'static [&'static str];
}

impl Tabular for TrialResult {
    fn columns() -> &'static [&'static str] {
        &Self::COLUMNS
    }
}

/// Mean and sample standard deviation (zero for a single value).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

/// Aggregates for one (scenario, mode) pair. Cost and contributing fraction
/// only cover trials where they were recorded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub mode: String,
    pub n: usize,
    /// Trials that ended in a planner or configuration error.
    pub errors: usize,
    pub success_mean: f64,
    pub success_std: f64,
    /// Fraction of trials with at least one violating state.
    pub violation_rate_mean: f64,
    pub violation_rate_std: f64,
    pub violation_count_mean: f64,
    pub violation_count_std: f64,
    pub jackknife_count_mean: f64,
    pub jackknife_count_std: f64,
    pub total_cost_mean: Option<f64>,
    pub total_cost_std: Option<f64>,
    pub fallback_rate_mean: f64,
    pub fallback_rate_std: f64,
    pub contributing_fraction_mean: Option<f64>,
    pub contributing_fraction_std: Option<f64>,
}

impl MetricsRow {
    pub const COLUMNS: [&'static str; 18] = [
        "scenario",
        "mode",
        "n",
        "errors",
        "success_mean",
        "success_std",
        "violation_rate_mean",
        "violation_rate_std",
        "violation_count_mean",
        "violation_count_std",
        "jackknife_count_mean",
        "jackknife_count_std",
        "total_cost_mean",
        "total_cost_std",
        "fallback_rate_mean",
        "fallback_rate_std",
        "contributing_fraction_mean",
        "contributing_fraction_std",
    ];

    fn from_trials(scenario: &str, mode: &str, trials: &[&TrialResult]) -> Self {
        let stat = |f: &dyn Fn(&TrialResult) -> f64| {
            Stat::of(&trials.iter().map(|t| f(t)).collect::<Vec<_>>()).unwrap_or_default()
        };
        let opt = |f: &dyn Fn(&TrialResult) -> Option<f64>| Stat::of(&trials.iter().filter_map(|t| f(t)).collect::<Vec<_>>());
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        let success = stat(&|t| flag(t.success));
        let violated = stat(&|t| flag(t.violation_count > 0));
        let violations = stat(&|t| t.violation_count as f64);
        let jackknifes = stat(&|t| t.jackknife_count as f64);
        let fallback = stat(&|t| t.fallback_rate);
        let cost = opt(&|t| t.total_cost);
        let contributing = opt(&|t| t.contributing_fraction);
        Self {
            scenario: scenario.into(),
            mode: mode.into(),
            n: trials.len(),
            errors: trials.iter().filter(|t| t.error.is_some()).count(),
            success_mean: success.mean,
            success_std: success.std,
            violation_rate_mean: violated.mean,
            violation_rate_std: violated.std,
            violation_count_mean: violations.mean,
            violation_count_std: violations.std,
            jackknife_count_mean: jackknifes.mean,
            jackknife_count_std: jackknifes.std,
            total_cost_mean: cost.map(|s| s.mean),
            total_cost_std: cost.map(|s| s.std),
            fallback_rate_mean: fallback.mean,
            fallback_rate_std: fallback.std,
            contributing_fraction_mean: contributing.map(|s| s.mean),
            contributing_fraction_std: contributing.map(|s| s.std),
        }
    }
}

impl Tabular for MetricsRow {
    fn columns() -> &'static [&'static str] {
        &Self::COLUMNS
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    /// Sorted by scenario, then mode.
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn from_results(results: &[TrialResult]) -> Self {
        let mut groups: BTreeMap<(&str, &str), Vec<&TrialResult>> = BTreeMap::new();
        for r in results {
            groups.entry((&r.scenario, &r.mode)).or_default().push(r);
        }
        Self {
            rows: groups
                .into_iter()
                .map(|((scenario, mode), trials)| MetricsRow::from_trials(scenario, mode, &trials))
                .collect(),
        }
    }

    pub fn get(&self, scenario: &str, mode: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.scenario == scenario && r.mode == mode)
    }
}

/// Writes rows as CSV (header first, even when empty) or as a JSON array.
pub fn export_results<T: Tabular>(rows: &[T], path: &Path, format: ExportFormat) -> Result<()> {
    let bytes = match format {
        ExportFormat::Json => {
            let mut s = serde_json::to_string_pretty(rows).expect("rows always serialize");
            s.push('\n');
            s.into_bytes()
        }
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            let fail = |e: csv::Error| HarnessError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            };
            w.write_record(T::columns()).map_err(fail)?;
            for r in rows {
                w.serialize(r).map_err(fail)?;
            }
            w.into_inner().expect("in-memory writer cannot fail")
        }
    };
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

pub fn import_json<T: Tabular>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Everything a suite produced. `timings` are not reproducible and are
/// written to their own file.
#[derive(Clone, Debug)]
pub struct SuiteOutput {
    pub results: Vec<TrialResult>,
    pub table: MetricsTable,
    pub timings: Vec<TrialTiming>,
}

fn scenario_files(config: &ExperimentConfig) -> Vec<(String, Result<ScenarioFile>)> {
    let mut files = Vec::new();
    for path in &config.scenarios {
        let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        let file = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::io(path, e))
            .and_then(|text| ScenarioFile::parse(&text, path));
        files.push((label, file));
    }
    for g in &config.generated {
        match g.scenarios() {
            Ok(list) => files.extend(list.into_iter().map(|f| (f.name.clone(), Ok(f)))),
            Err(e) => files.push((format!("{:?}_{}", g.kind, g.system).to_lowercase(), Err(e))),
        }
    }
    files
}

fn trace_name(scenario: &str, mode: &str, seed: u64) -> String {
    let clean: String = scenario
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{clean}__{mode}__{seed}.jsonl")
}

/// Runs every scenario × mode × seed, writing one trace per trial under
/// `out/traces`, then `results.{csv,json}`, `metrics.{csv,json}` and
/// `timing.json`. Trials that fail are recorded, never fatal; only I/O on
/// the output directory aborts.
pub fn run_suite(config: &ExperimentConfig, out: &Path) -> Result<SuiteOutput> {
    let traces = out.join("traces");
    std::fs::create_dir_all(&traces).map_err(|e| HarnessError::io(&traces, e))?;
    let registry = SystemRegistry::builtin();
    let seeds = config.seed_list();
    let mut results = Vec::new();
    let mut timings = Vec::new();

    for (label, file) in scenario_files(config) {
        let loaded = file.and_then(|mut f| {
            config.shield.apply(&mut f.shield);
            f.build(&registry)
        });
        for mode in &config.modes {
            for &seed in &seeds {
                match &loaded {
                    Ok(l) => {
                        let path: PathBuf = traces.join(trace_name(&l.scenario.name, mode, seed));
                        let (r, t) = run_trial(config, l, mode, seed, &path)?;
                        results.push(r);
                        timings.push(t);
                    }
                    Err(e) => results.push(TrialResult::failed(&label, "", mode, seed, e.to_string())),
                }
            }
        }
    }

    let table = MetricsTable::from_results(&results);
    export_results(&results, &out.join("results.csv"), ExportFormat::Csv)?;
    export_results(&results, &out.join("results.json"), ExportFormat::Json)?;
    export_results(&table.rows, &out.join("metrics.csv"), ExportFormat::Csv)?;
    export_results(&table.rows, &out.join("metrics.json"), ExportFormat::Json)?;
    write_timings(&timings, &out.join("timing.json"))?;
    Ok(SuiteOutput { results, table, timings })
}

pub fn write_timings(timings: &[TrialTiming], path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(timings).expect("timings always serialize");
    s.push('\n');
    std::fs::write(path, s).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(scenario: &str, seed: u64, success: bool, violations: usize, cost: Option<f64>) -> TrialResult {
        TrialResult {
            scenario: scenario.into(),
            system: "double_integrator".into(),
            mode: "shielded".into(),
            seed,
            success,
            reached_goal: success,
            violation_count: violations,
            jackknife_count: 0,
            total_cost: cost,
            steps: 10,
            cycles: 2,
            fallback_rate: 0.25,
            contributing_fraction: Some(1.0),
            error: None,
        }
    }

    #[test]
    fn stats() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[7.0]).unwrap(), Stat { mean: 7.0, std: 0.0 });
        assert_eq!(Stat::of(&[]), None);
    }

    #[test]
    fn table_groups_by_scenario_and_mode() {
        let rs = vec![
            result("b", 0, true, 0, Some(10.0)),
            result("a", 0, false, 3, None),
            result("b", 1, false, 0, Some(20.0)),
            result("b", 2, true, 0, Some(30.0)),
        ];
        let t = MetricsTable::from_results(&rs);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].scenario, "a");
        let b = t.get("b", "shielded").unwrap();
        assert_eq!(b.n, 3);
        assert!((b.success_mean - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(b.total_cost_mean, Some(20.0));
        assert_eq!(b.total_cost_std, Some(10.0));
        let a = t.get("a", "shielded").unwrap();
        assert_eq!((a.violation_rate_mean, a.violation_count_mean, a.total_cost_mean), (1.0, 3.0, None));
    }

    #[test]
    fn empty_csv_has_only_the_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        export_results::<TrialResult>(&[], &p, ExportFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, format!("{}\n", TrialResult::COLUMNS.join(",")));
    }

    #[test]
    fn one_row_csv_follows_the_column_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        export_results(&[result("s", 4, true, 0, Some(1.5))], &p, ExportFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "s,double_integrator,shielded,4,true,true,0,0,1.5,10,2,0.25,1.0,");
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(header, TrialResult::COLUMNS);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let rows = vec![result("s", 1, true, 0, Some(0.1 + 0.2)), result("t", 2, false, 4, None)];
        export_results(&rows, &p, ExportFormat::Json).unwrap();
        let back: Vec<TrialResult> = import_json(&p).unwrap();
        assert_eq!(back, rows);
        let q = dir.path().join("again.json");
        export_results(&back, &q, ExportFormat::Json).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("missing").join("r.csv");
        assert!(matches!(export_results::<TrialResult>(&[], &p, ExportFormat::Csv), Err(HarnessError::Io { .. })));
    }
}
