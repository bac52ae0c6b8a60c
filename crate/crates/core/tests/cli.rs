use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn redinv(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_redinv"));
    cmd.args(args).env_remove("REDINV_THREADS");
    if let Some(t) = threads {
        cmd.env("REDINV_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, file: &str, body: &str) -> PathBuf {
    let p = dir.join(file);
    fs::write(&p, body).unwrap();
    p
}

fn pbdw_config(name: &str) -> String {
    format!(
        r#"{{
  "name": "{name}",
  "output": "results/{name}",
  "model": {{"n_h": 63, "testbed": "elliptic_2d"}},
  "training": {{"grid": [5, 5], "held_out": [3, 3]}},
  "sensors": {{"dictionary": {{"kind": "point_eval", "count": 15}}, "select": [1, 4, 7, 10, 13]}},
  "method": {{"pbdw": {{"n": 3}}}}
}}"#
    )
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn pbdw_fit_and_estimate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.json", &pbdw_config("a"));
    let out = redinv(&["fit", cfg.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", stderr(&out));
    let run = tmp.path().join("results/a");
    assert!(run.join("errors.csv").exists() && run.join("operator.json").exists());
    let m = manifest(&run);
    assert_eq!(m["command"], "fit");
    assert_eq!(m["threads"], 1);
    assert!(m["summary"]["beta"].as_f64().unwrap() > 0.0);
    assert_eq!(m["outputs"].as_object().unwrap().len(), 2);

    let out = redinv(&["estimate", cfg.to_str().unwrap()], Some("2"));
    assert!(out.status.success(), "{}", stderr(&out));
    let m = manifest(&run);
    assert_eq!(m["threads"], 2);
    // Held-out midpoint grid of 3 x 3 cells.
    let rows = fs::read_to_string(run.join("errors.csv")).unwrap().lines().count();
    assert_eq!(rows, 10);
}

#[test]
fn identical_configs_give_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let body = pbdw_config("same").replace(
        "\"method\": {\"pbdw\": {\"n\": 3}}",
        "\"method\": {\"pbdw\": {\"n\": 3, \"noise\": {\"level\": 0.001, \"seed\": 7}}}",
    );
    let cfg = write_config(tmp.path(), "s.json", &body);
    let run = tmp.path().join("results/same");
    assert!(redinv(&["estimate", cfg.to_str().unwrap()], None).status.success());
    let first = manifest(&run)["outputs"].clone();
    fs::remove_dir_all(run.join("cache")).unwrap();
    assert!(redinv(&["estimate", cfg.to_str().unwrap()], None).status.success());
    assert_eq!(manifest(&run)["outputs"], first);
}

#[test]
fn schema_errors_exit_2_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{
  "name": "bad",
  "model": {"n_h": 31, "abar": {"breaks": [0, 1], "values": [1]},
            "psi": [{"breaks": [0, 1], "values": [0.5]}],
            "f": {"breaks": [0, 1], "values": [1]},
            "Y": {"lo": [1.0], "hi": [-1.0]}},
  "training": {"grid": [5]},
  "sensors": {"placements": [{"kind": "point_eval", "location": 0.5}]},
  "method": {"pbdw": {"n": 1}}
}"#;
    let cfg = write_config(tmp.path(), "bad.json", body);
    let out = redinv(&["fit", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Y.lo"), "{}", stderr(&out));

    let unknown = pbdw_config("u").replace("\"n_h\": 63", "\"n_h\": 63, \"mesh\": 2");
    let cfg = write_config(tmp.path(), "u.json", &unknown);
    let out = redinv(&["fit", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("model"), "{}", stderr(&out));

    let cfg = write_config(tmp.path(), "w.json", &pbdw_config("w"));
    let out = redinv(&["family", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));

    let out = redinv(&["fit", cfg.to_str().unwrap()], Some("zero"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let body = pbdw_config("num").replace("[1, 4, 7, 10, 13]", "[1, 4]");
    let cfg = write_config(tmp.path(), "n.json", &body);
    let out = redinv(&["fit", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("fit::pbdw"), "{}", stderr(&out));
}

#[test]
fn placement_family_and_benchmark_with_report() {
    let tmp = tempfile::tempdir().unwrap();
    let results = tmp.path().join("results");
    let out = redinv(&["report", results.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    fs::create_dir_all(&results).unwrap();
    let out = redinv(&["report", results.to_str().unwrap()], None);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "no runs");

    let common = r#""model": {"n_h": 63, "testbed": "elliptic_2d"},
  "training": {"grid": [9, 9], "held_out": [4, 4]},
  "sensors": {"dictionary": {"kind": "point_eval", "count": 31}"#;
    let configs = [
        ("zeta", "place", r#"}, "method": {"omp_place": {"n": 3, "beta_star": 0.5, "m_max": 20, "variant": "worst_case"}}"#),
        ("gamma", "place", r#"}, "method": {"nested": {"beta_lower": 0.4, "eps_stop": 1e-6, "n_max": 5, "m_max": 31}}"#),
        ("eta", "place", r#"}, "method": {"geim": {"n_max": 4, "eps_stop": 0.0}}"#),
        ("beta", "family", r#", "select": [3, 9, 15, 21, 27]}, "method": {"piecewise": {"criterion": {"sigma": 0.02}, "strategy": "full_dyadic", "budget": 32, "selection": "surrogate"}}"#),
        ("alpha", "benchmark", r#", "select": [3, 9, 15, 21, 27]}, "method": {"benchmark": {"n": 3, "sigma": 0.02, "budget": 32, "strategy": "greedy_coordinate", "iters": 500, "sigmas": [0.0, 0.01, 0.1], "width_order": 4}}"#),
    ];
    for (name, cmd, tail) in configs {
        let body = format!("{{\n  \"name\": \"{name}\",\n  \"output\": \"results/{name}\",\n  {common}{tail}\n}}");
        let cfg = write_config(tmp.path(), &format!("{name}.json"), &body);
        let out = redinv(&[cmd, cfg.to_str().unwrap()], None);
        assert!(out.status.success(), "{name}: {}", stderr(&out));
    }
    assert!(results.join("gamma/joint.csv").exists());
    assert!(results.join("zeta/placement.csv").exists());
    assert!(results.join("beta/family.json").exists() && results.join("beta/bases/cell_0.csv").exists());
    assert!(results.join("alpha/benchmark.csv").exists());

    // The family is reused by a later estimate on the same config.
    let cfg = tmp.path().join("beta.json");
    let out = redinv(&["-v", "estimate", cfg.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("reusing cached family"), "{}", stderr(&out));
    assert!(results.join("beta/selection.csv").exists());

    let out = redinv(&["report", results.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let names: Vec<&str> = text.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(names, ["alpha", "beta", "eta", "gamma", "zeta"]);
    assert!(text.lines().next().unwrap().contains("delta_tilde"));
    let json: Value = serde_json::from_str(&fs::read_to_string(results.join("report.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 5);

    // A run directory whose manifest is missing is an error.
    fs::remove_file(results.join("eta/manifest.json")).unwrap();
    let out = redinv(&["report", results.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn snapshots_command_and_two_run_report() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["second", "first"] {
        let cfg = write_config(tmp.path(), &format!("{name}.json"), &pbdw_config(name));
        let out = redinv(&["snapshots", cfg.to_str().unwrap()], None);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let run = tmp.path().join("results/first");
    assert_eq!(fs::read_to_string(run.join("training.csv")).unwrap().lines().count(), 26);
    let out = redinv(&["report", tmp.path().join("results").to_str().unwrap()], None);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("first") && rows[1].starts_with("second"));
}
