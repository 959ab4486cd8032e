use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_safempd"))
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.toml"))
}

fn code(cmd: &mut Command) -> i32 {
    cmd.output().unwrap().status.code().unwrap()
}

#[test]
fn malformed_scenario_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema = 1\nname = \"x\"\nbogus = 3\n").unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(bin().args(["plan", "--scenario"]).arg(&bad).arg("--out").arg(&out)), 2);
    assert_eq!(code(bin().args(["plan", "--mode", "nope", "--scenario"]).arg(shipped("double_integrator")).arg("--out").arg(&out)), 2);
}

#[test]
fn missing_trace_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(bin().args(["plot", "--trace"]).arg(dir.path().join("none.jsonl")).arg("--out").arg(dir.path().join("p.svg"))), 1);
}

#[test]
fn successful_plan_and_certify_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plan");
    let status = code(
        bin()
            .args(["plan", "--scenario"])
            .arg(shipped("double_integrator"))
            .args(["--K", "32", "--N", "10", "--horizon", "40", "--exec-steps", "5", "--max-cycles", "40", "--out"])
            .arg(&out),
    );
    assert_eq!(status, 0);
    for f in ["trace.jsonl", "result.json", "timing.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let cert = dir.path().join("cert.json");
    assert_eq!(code(bin().args(["certify", "--samples", "500", "--scenario"]).arg(shipped("accel_tt")).arg("--out").arg(&cert)), 0);
}

#[test]
fn unfinished_plan_exits_with_planner_code() {
    let dir = tempfile::tempdir().unwrap();
    let status = code(
        bin()
            .args(["plan", "--scenario"])
            .arg(shipped("double_integrator"))
            .args(["--K", "4", "--N", "2", "--horizon", "10", "--max-cycles", "1", "--out"])
            .arg(dir.path().join("o")),
    );
    assert_eq!(status, 3);
}

#[test]
fn generated_scenario_round_trips_through_plan() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("g.toml");
    assert_eq!(code(bin().args(["gen", "--seed", "4", "--system", "kinematic_tt", "--out"]).arg(&file)), 0);
    safempd_harness::load_scenario(&file).unwrap();
}
