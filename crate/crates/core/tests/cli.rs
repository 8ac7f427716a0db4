mod common;

use std::path::Path;
use std::process::{Command, Output};

use bearing_formation::simulator::ResultJson;
use common::scenario_path;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bearing-formation"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(name: &str) -> String {
    scenario_path(name).to_string_lossy().into_owned()
}

#[test]
fn analyze_square_is_unique_and_rigid() {
    let o = run(&["analyze", &path("square_pd")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["uniqueness"]["unique"], true);
    assert_eq!(v["rigidity"]["is_infinitesimally_bearing_rigid"], true);
    assert_eq!(v["spectral"]["hurwitz"], true);
    assert_eq!(v["collision"]["guaranteed"], true);
}

#[test]
fn analyze_cube_reports_rank() {
    let o = run(&["analyze", &path("cube_accel")]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rigidity"]["rank"], 20);
    assert_eq!(v["uniqueness"]["unique"], true);
}

#[test]
fn analyze_rectangle_is_infeasible() {
    let o = run(&["analyze", &path("rectangle_nonunique")]);
    assert_eq!(o.status.code(), Some(3));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["code"], "NON_UNIQUE_TARGET");
    assert_eq!(v["uniqueness"]["unique"], false);
    assert!(stderr(&o).contains("NON_UNIQUE_TARGET"));
}

#[test]
fn malformed_and_unknown_keys_exit_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"graph\": {\n    \"n\": 4,\n  }\n}").unwrap();
    let o = run(&["analyze", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));

    let text = std::fs::read_to_string(scenario_path("square_pd")).unwrap();
    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, text.replacen("\"run\": {", "\"run\": {\n    \"dt\": 1,", 1)).unwrap();
    let o = run(&["analyze", unknown.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown field `dt`"), "{}", stderr(&o));
}

#[test]
fn missing_file_exits_2() {
    let o = run(&["simulate", "/nonexistent/scenario.json"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["analyze", "/nonexistent/scenario.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_gain_exits_2_with_code() {
    let o = run(&["analyze", &path("square_pd"), "--override", "controller.k_p=-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("BAD_GAIN"));
}

fn simulate_into(dir: &Path, name: &str, extra: &[&str]) -> Output {
    let csv = dir.join(format!("{name}.csv"));
    let json = dir.join(format!("{name}.result.json"));
    let mut args = vec![
        "simulate".to_string(),
        path(name),
        "--csv".into(),
        csv.to_string_lossy().into_owned(),
        "--json".into(),
        json.to_string_lossy().into_owned(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    bin().args(&args).output().unwrap()
}

#[test]
fn simulate_square_converges_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate_into(dir.path(), "square_pd", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["final_delta_p"].as_f64().unwrap() < 1e-3);
    for key in ["final_delta_v", "final_bearing_error", "min_distance", "wall_time_s"] {
        assert!(v[key].is_number(), "{key}");
    }

    let csv = std::fs::read_to_string(dir.path().join("square_pd.csv")).unwrap();
    let golden = include_str!("golden/square_header.csv");
    assert_eq!(csv.lines().next().unwrap(), golden.trim_end());
    assert_eq!(csv.lines().count(), 30_002);

    let text = std::fs::read_to_string(dir.path().join("square_pd.result.json")).unwrap();
    let stored: ResultJson = serde_json::from_str(&text).unwrap();
    let summary = stored.summary.clone();
    let reloaded = stored.into_result();
    assert_eq!(reloaded.summary(), summary);
    assert_eq!(reloaded.to_json().summary, summary);
}

#[test]
fn integral_gain_above_bound_warns_and_diverges() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate_into(dir.path(), "square_pd_integral", &["--override", "controller.k_I=999"]);
    assert!(stderr(&o).contains("BAD_GAIN_BOUND"), "{}", stderr(&o));
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("square_pd_integral.result.json")).unwrap();
    let stored: ResultJson = serde_json::from_str(&text).unwrap();
    assert!(stored.aborted.is_some());
    assert!(stored.summary.aborted);
    assert!(dir.path().join("square_pd_integral.csv").exists());
}

#[test]
fn sweep_needs_values() {
    let o = run(&["sweep", &path("square_pd_sat"), "--param", "controller.beta", "--values", ""]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["sweep", &path("square_pd_sat"), "--param", "controller.beta", "--values", "a,b"]);
    assert_eq!(o.status.code(), Some(2));
}

fn sweep_rows(o: &Output) -> Vec<Vec<String>> {
    let text = stdout(o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), bearing_formation::cli::SWEEP_HEADER);
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn sweep_integral_gain_flips_at_bound() {
    // bound = 16 * 0.14536 = 2.3258
    let o = bin()
        .args(["sweep", &path("square_pd_integral"), "--param", "controller.k_I", "--values", "0.6,1.2,3.0,4.0"])
        .env(bearing_formation::cli::WORKERS_ENV, "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = sweep_rows(&o);
    let values: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(values, ["0.6", "1.2", "3.0", "4.0"]);
    let converged: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(converged, ["true", "true", "false", "false"]);
}

#[test]
fn sweep_beta_all_converge_and_row_failures_are_recorded() {
    let o = run(&["sweep", &path("square_pd_sat"), "--param", "controller.beta", "--values", "0.5,1,2,-1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = sweep_rows(&o);
    assert_eq!(rows.len(), 4);
    for r in &rows[..3] {
        assert_eq!(r[1], "OK");
        assert_eq!(r[2], "true", "{r:?}");
    }
    assert_eq!(rows[3][1], "BAD_GAIN");
}

#[test]
fn sweep_output_independent_of_worker_count() {
    let args = ["sweep", &path("square_pd"), "--param", "controller.k_v", "--values", "0.5,1,1.5"];
    let one = bin().args(args).env(bearing_formation::cli::WORKERS_ENV, "1").output().unwrap();
    let many = bin().args(args).env(bearing_formation::cli::WORKERS_ENV, "3").output().unwrap();
    assert_eq!(one.stdout, many.stdout);
}

#[test]
fn help_exits_0_and_bad_subcommand_exits_2() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}
