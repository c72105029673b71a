//! End-to-end checks of the command-line surface: exit codes, artifact
//! bytes, and the manifest contract. Every run goes through the real binary.

use std::path::Path;
use std::process::{Command, Output};

use mldp::io;
use mldp_core::evolution::ControlPath;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mldp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Loads a bundled config as a JSON document for targeted mutation.
fn load_doc(name: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(Path::new("configs").join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn write_doc(dir: &Path, doc: &serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(doc).unwrap()).unwrap();
    path
}

fn manifest(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn invalid_exponent_exits_2_and_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let mut doc = load_doc("scalar_ou_smoke.json");
    doc["triple"]["alpha"] = serde_json::json!(0.5);
    let cfg = write_doc(tmp.path(), &doc);
    let out = run(&["verify-conditions", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("alpha"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_config_key_exits_2_and_is_quoted() {
    let tmp = tempfile::tempdir().unwrap();
    let mut doc = load_doc("scalar_ou_smoke.json");
    doc["solver"]["step_size"] = serde_json::json!(0.01);
    let cfg = write_doc(tmp.path(), &doc);
    let out = run(&["skeleton", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("step_size"), "stderr: {}", stderr(&out));
}

#[test]
fn event_and_eps_requirements_exit_2() {
    // The bundled p-Laplace certificate config has neither an event nor an
    // eps list; both estimator-facing subcommands must refuse it.
    let out = run(&["sweep", "configs/p_laplace.json"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    let out = run(&["minimize-action", "configs/p_laplace.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("event"), "stderr: {}", stderr(&out));

    let tmp = tempfile::tempdir().unwrap();
    let mut doc = load_doc("scalar_ou_smoke.json");
    doc.as_object_mut().unwrap().remove("event");
    let cfg = write_doc(tmp.path(), &doc);
    let out = run(&["sweep", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("event"), "stderr: {}", stderr(&out));
}

#[test]
fn simulate_at_eps_zero_reproduces_the_skeleton_artifacts() {
    let skel_dir = tempfile::tempdir().unwrap();
    let sim_dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "skeleton",
        "configs/heat_tube.json",
        "--output-dir",
        skel_dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let out = run(&[
        "simulate",
        "configs/heat_tube.json",
        "--eps",
        "0",
        "--output-dir",
        sim_dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let skel_csv = std::fs::read(skel_dir.path().join("skeleton.csv")).unwrap();
    let sim_csv = std::fs::read(sim_dir.path().join("sample_000.csv")).unwrap();
    assert_eq!(skel_csv, sim_csv, "eps = 0 CSV differs from the skeleton");
    let skel_bin = std::fs::read(skel_dir.path().join("skeleton.bin")).unwrap();
    let sim_bin = std::fs::read(sim_dir.path().join("sample_000.bin")).unwrap();
    assert_eq!(skel_bin, sim_bin, "eps = 0 binary differs from the skeleton");
}

#[test]
fn simulate_writes_one_artifact_pair_per_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "configs/scalar_ou_smoke.json",
        "--eps",
        "0.5",
        "--samples",
        "3",
        "--output-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    for i in 0..3 {
        assert!(tmp.path().join(format!("sample_{i:03}.csv")).is_file());
        assert!(tmp.path().join(format!("sample_{i:03}.bin")).is_file());
    }
    let m = manifest(tmp.path());
    assert_eq!(m["subcommand"], "simulate");
    assert_eq!(m["overrides"]["eps"], serde_json::json!(0.5));
    assert_eq!(m["overrides"]["samples"], serde_json::json!(3));
    let artifacts: Vec<&str> = m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(artifacts.contains(&"sample_002.csv"));
}

#[test]
fn skeleton_accepts_a_control_csv_and_rejects_grid_mismatches() {
    let tmp = tempfile::tempdir().unwrap();
    // heat_tube: t_end 0.5, 256 steps, 4 noise modes.
    let ctrl = ControlPath::constant(0.5, 256, &[0.4, 0.0, 0.0, 0.0]).unwrap();
    let good = tmp.path().join("push.csv");
    std::fs::write(&good, io::control_csv(&ctrl)).unwrap();
    let out = run(&[
        "skeleton",
        "configs/heat_tube.json",
        "--control",
        good.to_str().unwrap(),
        "--output-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(tmp.path().join("skeleton.csv").is_file());

    let narrow = ControlPath::constant(0.5, 256, &[0.4]).unwrap();
    let bad = tmp.path().join("narrow.csv");
    std::fs::write(&bad, io::control_csv(&narrow)).unwrap();
    let out = run(&[
        "skeleton",
        "configs/heat_tube.json",
        "--control",
        bad.to_str().unwrap(),
        "--output-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}

#[test]
fn unreachable_event_exits_4_and_flags_the_table() {
    // Zero out the only noise mode: the control then cannot move the state,
    // so the threshold event is infeasible and the gap column must go empty.
    let tmp = tempfile::tempdir().unwrap();
    let mut doc = load_doc("scalar_ou_smoke.json");
    doc["noise"]["modes"][0]["shape"] = serde_json::json!([0.0]);
    doc["solver"]["n_steps"] = serde_json::json!(64);
    doc["eps_list"] = serde_json::json!([0.5, 0.38]);
    doc["budgets"] = serde_json::json!([400, 200]);
    doc["optimizer"] = serde_json::json!({
        "multi_starts": 1,
        "max_iters": 60,
        "beta_escalation_cap": 1e6
    });
    let cfg = write_doc(tmp.path(), &doc);

    let min_dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "minimize-action",
        cfg.to_str().unwrap(),
        "--output-dir",
        min_dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
    let action: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(min_dir.path().join("action.json")).unwrap())
            .unwrap();
    assert_eq!(action["feasible"], serde_json::json!(false));

    let sweep_dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--output-dir",
        sweep_dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
    let table = std::fs::read_to_string(sweep_dir.path().join("sweep.csv")).unwrap();
    for line in table.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[8], "plain", "no tilt exists without a feasible minimizer");
        assert!(fields[7].is_empty(), "gap must be withheld when flagged: {line}");
    }
}

#[test]
fn thread_count_precedence_is_flag_then_env() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "skeleton",
            "configs/heat_tube.json",
            "--output-dir",
            dir.path().to_str().unwrap(),
        ])
        .env("MLDP_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert_eq!(manifest(dir.path())["threads"], serde_json::json!(3));

    let out = bin()
        .args([
            "skeleton",
            "configs/heat_tube.json",
            "--threads",
            "2",
            "--output-dir",
            dir.path().to_str().unwrap(),
        ])
        .env("MLDP_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert_eq!(manifest(dir.path())["threads"], serde_json::json!(2));
}

#[test]
fn config_hash_ignores_the_output_dir_override() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = run(&[
            "skeleton",
            "configs/heat_tube.json",
            "--output-dir",
            dir.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "stderr: {}", stderr(&out));
    }
    let ma = manifest(a.path());
    let mb = manifest(b.path());
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert!(ma["config_hash"].as_str().unwrap().starts_with("fnv1a64:"));
    assert!(ma["wall_ms"].get("skeleton").is_some());
}

#[test]
fn verify_conditions_reports_claims_through_the_json_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "verify-conditions",
        "configs/fast_diffusion.json",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("condition_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["all_claimed_pass"], serde_json::json!(true));
    let entries = report["entries"].as_array().unwrap();
    let strong = entries
        .iter()
        .find(|e| e["condition"] == "strong_monotonicity")
        .unwrap();
    assert_eq!(strong["claimed"], serde_json::json!(false));
    let classical = entries
        .iter()
        .find(|e| e["condition"] == "classical_monotonicity")
        .unwrap();
    assert_eq!(classical["claimed"], serde_json::json!(true));
    assert_eq!(classical["pass"], serde_json::json!(true));
}
