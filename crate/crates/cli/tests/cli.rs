use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn qretro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qretro")).args(args).output().expect("binary runs")
}

fn cfg(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

#[test]
fn steady_cavity_backward_reports_divergence() {
    let out = qretro(&["steady", "--config", &cfg("cavity_eta05.json"), "--direction", "bwd", "--stdout"]);
    assert_eq!(out.status.code(), Some(2));
    let v = json(&out);
    assert!((v["V"][0][0].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(v["divergent"], serde_json::json!([1]));
}

#[test]
fn steady_optomech_forward_is_pure() {
    let out = qretro(&["steady", "--config", &cfg("optomech_resonant.json"), "--stdout"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!((v["V"][0][0].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((v["purity"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn malformed_json_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"n_modes\": 1,\n  \"H\": [[0, 0], [0 0]]\n}").unwrap();
    let out = qretro(&["steady", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn unknown_key_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("run.json");
    std::fs::write(&bad, format!("{{\"model\": \"{}\", \"dtt\": 1}}", cfg("cavity_eta05.json"))).unwrap();
    let out = qretro(&["simulate", "--config", bad.to_str().unwrap(), "--duration", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_then_filter_reproduces_truth() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.csv");
    let filt = dir.path().join("filt.csv");
    let model = cfg("cavity_eta09.json");
    let sim = qretro(&["simulate", "--config", &model, "--dt", "0.01", "--duration", "3", "--seed", "11", "--out", rec.to_str().unwrap()]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    let f = qretro(&["filter", "--config", &model, "--record", rec.to_str().unwrap(), "--out", filt.to_str().unwrap()]);
    assert!(f.status.success(), "{}", String::from_utf8_lossy(&f.stderr));
    let truth = std::fs::read(dir.path().join("rec.truth.csv")).unwrap();
    assert_eq!(std::fs::read(&filt).unwrap(), truth);

    // re-running gives the same bytes
    let rec2 = dir.path().join("rec2.csv");
    qretro(&["simulate", "--config", &model, "--dt", "0.01", "--duration", "3", "--seed", "11", "--out", rec2.to_str().unwrap()]);
    assert_eq!(std::fs::read(&rec).unwrap(), std::fs::read(&rec2).unwrap());
}

#[test]
fn zero_duration_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.csv");
    let out = qretro(&["simulate", "--config", &cfg("cavity_eta05.json"), "--dt", "0.01", "--duration", "0", "--out", rec.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&rec).unwrap(), "t,dY_1\n");
}

#[test]
fn flags_override_run_file() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.json");
    std::fs::write(
        &run,
        format!("{{\"model\": \"{}\", \"dt\": 0.01, \"duration\": 0.05, \"out\": \"from_file.csv\"}}", cfg("cavity_eta05.json")),
    )
    .unwrap();
    let out = qretro(&["simulate", "--config", run.to_str().unwrap(), "--dt", "0.025", "--stdout"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("2.5000000000000001e-2,"));
    assert!(!dir.path().join("from_file.csv").exists());
}

#[test]
fn retrodict_ensemble_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_csv = dir.path().join("ens.csv");
    let out = qretro(&[
        "retrodict",
        "--config",
        &cfg("cavity_retrodict_ensemble.json"),
        "--ensemble",
        "10000",
        "--out",
        out_csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ens.summary.json")).unwrap()).unwrap();
    let mean = summary["mean"][0].as_f64().unwrap();
    let se = summary["standard_error"][0].as_f64().unwrap();
    assert!((mean - 2.0).abs() <= 3.0 * se, "{mean} ± {se}");
    let table = std::fs::read_to_string(&out_csv).unwrap();
    assert_eq!(table.lines().count(), 10_001);
    assert!(table.starts_with("index,r_1,r_2\n"));
}

#[test]
fn retrodict_single_record() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.csv");
    let model = cfg("cavity_eta09.json");
    qretro(&["simulate", "--config", &model, "--dt", "0.01", "--duration", "2", "--out", rec.to_str().unwrap()]);
    let out = qretro(&["retrodict", "--config", &model, "--record", rec.to_str().unwrap(), "--v-large", "1e4", "--stdout"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.ends_with("1.0000000000000000e4,0.0000000000000000e0,1.0000000000000000e4"), "{last}");
}

#[test]
fn sweep_without_axes_is_one_row() {
    let out = qretro(&["sweep", "--config", &cfg("optomech_resonant.json"), "--stdout"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("v_xx_rho,v_pp_rho,v_xx_e,v_pp_e,"));
}

#[test]
fn sweep_grid_has_axis_columns() {
    let out = qretro(&["sweep", "--config", &cfg("optomech_resonant.json"), "--axis", "eta=0.5:1:3", "--axis", "cq=0.01:100:4:log", "--stdout"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 13);
    assert!(text.starts_with("eta,cq,v_xx_rho,"));
}

#[test]
fn modes_header_names_channels() {
    let out = qretro(&["modes", "--config", &cfg("optomech_resonant.json"), "--dt", "10", "--duration", "30", "--stdout"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("t,f_xc,f_xs,f_pc,f_ps\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn modes_of_divergent_direction_exit_2() {
    let out = qretro(&["modes", "--config", &cfg("cavity_eta05.json"), "--direction", "bwd", "--dt", "0.1", "--duration", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_sensitivity_fixture_fails() {
    let out = qretro(&["verify", "--quick", "--perturb", "1e-3", "--stdout"]);
    assert_eq!(out.status.code(), Some(1));
    let report = json(&out);
    for id in [2, 4, 5] {
        assert_eq!(report["checks"][id - 1]["passed"], false, "check {id}");
    }
}

#[test]
fn verify_quick_report() {
    let out = qretro(&["verify", "--quick", "--stdout"]);
    let report = json(&out);
    let checks = report["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 10);
    assert_eq!(out.status.success(), report["passed"].as_bool().unwrap());
    let total: f64 = checks.iter().map(|c| c["elapsed_s"].as_f64().unwrap()).sum();
    assert!(total < 60.0, "{total} s");
}
