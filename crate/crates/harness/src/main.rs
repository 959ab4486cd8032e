use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use safempd_core::diffusion::DiffusionParams;
use safempd_core::shield::certify_backup;
use safempd_harness::generate::{generate, GeneratorKind};
use safempd_harness::scenario_file::ScenarioFile;
use safempd_harness::suite::{run_suite, write_timings};
use safempd_harness::trial::run_trial;
use safempd_harness::{ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "safempd", version, about = "Shielded model-predictive diffusion planner")]
struct Cli {
    /// Worker threads for candidate evaluation. Never changes results.
    #[arg(long, global = true, env = "SAFEMPD_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Shielded,
    Vanilla,
    Filtered,
    Penalty,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Shielded => "shielded",
            Mode::Vanilla => "vanilla",
            Mode::Filtered => "filtered",
            Mode::Penalty => "penalty",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Random,
    Corridor,
}

#[derive(Subcommand)]
enum Command {
    /// Plan and execute one trial; writes trace.jsonl, result.json and timing.json.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "shielded")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Candidates per level.
        #[arg(long = "K")]
        k: Option<usize>,
        /// Denoising levels.
        #[arg(long = "N")]
        n: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Backup horizon in steps.
        #[arg(long)]
        tb: Option<usize>,
        #[arg(long, default_value_t = 1)]
        exec_steps: usize,
        #[arg(long, default_value_t = 100)]
        max_cycles: usize,
    },
    /// Run an experiment suite described by a TOML configuration.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample-based check of the backup policy's invariance and recovery.
    Certify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long = "t-cert", default_value_t = 50)]
        t_cert: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a scenario file.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        system: String,
        #[arg(long, default_value_t = 8)]
        obstacles: usize,
        #[arg(long, value_enum, default_value = "random")]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a trace as SVG.
    Plot {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_PLANNER: u8 = 3;
const EXIT_CERTIFY: u8 = 4;

enum Failure {
    Config(String),
    Planner(String),
    Certify(String),
    Other(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Io { .. } | HarnessError::Trace { .. } => Failure::Other(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut s = serde_json::to_string_pretty(value).expect("values always serialize");
    s.push('\n');
    std::fs::write(path, s).map_err(|e| HarnessError::io(path, e).into())
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e).into())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Plan {
            scenario,
            mode,
            seed,
            out,
            k,
            n,
            lambda,
            horizon,
            tb,
            exec_steps,
            max_cycles,
        } => {
            let text = std::fs::read_to_string(&scenario).map_err(|e| HarnessError::io(&scenario, e))?;
            let mut file = ScenarioFile::parse(&text, &scenario)?;
            if tb.is_some() {
                file.shield.tb = tb;
            }
            let loaded = file.build(&Default::default())?;
            let d = DiffusionParams::default();
            let config = ExperimentConfig {
                planner: DiffusionParams {
                    candidates: k.unwrap_or(d.candidates),
                    levels: n.unwrap_or(d.levels),
                    lambda: lambda.or(d.lambda),
                    horizon: horizon.unwrap_or(d.horizon),
                    mode: mode.name().into(),
                    ..d
                },
                exec_steps,
                max_cycles,
                ..Default::default()
            };
            config.planner.validate().map_err(|e| Failure::Config(e.to_string()))?;
            if exec_steps == 0 {
                return Err(Failure::Config("exec_steps must be at least 1".into()));
            }
            create_dir(&out)?;
            let (result, timing) = run_trial(&config, &loaded, mode.name(), seed, &out.join("trace.jsonl"))?;
            write_json(&out.join("result.json"), &result)?;
            write_timings(&[timing], &out.join("timing.json"))?;
            println!(
                "{}: success={} violations={} jackknifes={} steps={} cycles={}",
                result.scenario, result.success, result.violation_count, result.jackknife_count, result.steps, result.cycles
            );
            match (result.success, result.error) {
                (true, _) => Ok(()),
                (false, Some(e)) => Err(Failure::Planner(e)),
                (false, None) => Err(Failure::Planner("goal not reached safely within the cycle budget".into())),
            }
        }
        Command::Bench { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let suite = run_suite(&config, &out)?;
            println!("{:<28} {:<9} {:>3} {:>8} {:>10} {:>9} {:>12}", "scenario", "mode", "n", "success", "violation", "fallback", "contributing");
            for r in &suite.table.rows {
                println!(
                    "{:<28} {:<9} {:>3} {:>8.3} {:>10.3} {:>9.3} {:>12}",
                    r.scenario,
                    r.mode,
                    r.n,
                    r.success_mean,
                    r.violation_rate_mean,
                    r.fallback_rate_mean,
                    r.contributing_fraction_mean.map_or("-".into(), |v| format!("{v:.3}"))
                );
            }
            let cycles: Vec<f64> = suite.timings.iter().flat_map(|t| t.cycle_ms.iter().copied()).collect();
            if !cycles.is_empty() {
                let mean = cycles.iter().sum::<f64>() / cycles.len() as f64;
                let max = cycles.iter().copied().fold(0.0, f64::max);
                println!("plan cycle wall time: mean {mean:.1} ms, max {max:.1} ms over {} cycles", cycles.len());
            }
            Ok(())
        }
        Command::Certify {
            scenario,
            samples,
            t_cert,
            seed,
            out,
        } => {
            let loaded = safempd_harness::load_scenario(&scenario)?;
            let report = certify_backup(&loaded.scenario, &loaded.backup, samples, t_cert, seed)
                .map_err(|e| Failure::Certify(e.to_string()))?;
            write_json(&out, &report)?;
            println!(
                "{}: invariance {:.4} ({}/{}), recovery {:.4} ({}/{})",
                report.scenario,
                report.invariance.rate,
                report.invariance.passed,
                report.invariance.tested,
                report.recovery.rate,
                report.recovery.passed,
                report.recovery.tested
            );
            if report.certified {
                Ok(())
            } else {
                Err(Failure::Certify("backup policy failed certification".into()))
            }
        }
        Command::Gen {
            seed,
            system,
            obstacles,
            kind,
            out,
        } => {
            let kind = match kind {
                Kind::Random => GeneratorKind::Random,
                Kind::Corridor => GeneratorKind::Corridor,
            };
            let file = generate(kind, seed, &system, obstacles)?;
            std::fs::write(&out, file.to_toml()).map_err(|e| HarnessError::io(&out, e))?;
            Ok(())
        }
        Command::Plot { trace, out } => {
            safempd_harness::plot::emit_plot(&trace, &out)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match cli.workers {
        Some(0) => {
            eprintln!("error: workers must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Planner(m)) => {
            eprintln!("planner failure: {m}");
            ExitCode::from(EXIT_PLANNER)
        }
        Err(Failure::Certify(m)) => {
            eprintln!("certification failure: {m}");
            ExitCode::from(EXIT_CERTIFY)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::FAILURE
        }
    }
}
