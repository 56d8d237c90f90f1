use serde_json::{json, Value};
use std::path::Path;
use std::process::{Command, Output};

fn etsim(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_etsim"));
    c.args(args).env_remove("ETSIM_WORKERS").env_remove("ETSIM_OUT_DIR");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn params(g: f64, ncut: usize) -> Value {
    json!({
        "omega": 1.0, "delta_e": 1.0, "v_x": 0.1, "g": g, "gamma": 0.1,
        "nbar": 0.2, "gamma_z": 0.0, "gamma_m": 0.0, "ncut": ncut
    })
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn scan_spec() -> Value {
    json!({
        "units": "omega",
        "base": params(0.6, 14),
        "axis": { "name": "delta_e", "values": [0.5, 1.0, 1.5, 2.0, 2.5] },
        "t_sim": { "mode": "periods", "periods": 3.0 },
        "method": "lifetime",
        "samples": 61,
        "tol": 1e-8,
        "steady": true
    })
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn preset_list_names_all_figures() {
    let v: Value = serde_json::from_str(&stdout(&etsim(&["preset", "list"], &[]))).unwrap();
    let names: Vec<&str> = v.as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["fig1c", "fig3a", "fig3d", "fig4a", "fig5", "figS4"]);
}

#[test]
fn evolve_csv_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "e.json", &json!({ "units": "omega", "params": params(0.5, 12), "periods": 2.0, "samples": 21 }));
    let a = stdout(&etsim(&["evolve", "--config", &cfg], &[]));
    let b = stdout(&etsim(&["evolve", "--config", &cfg], &[]));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 22);
    assert!(a.lines().next().unwrap().starts_with("t,"));
    assert!(!a.contains('\r'));
    let j: Value = serde_json::from_str(&stdout(&etsim(&["evolve", "--config", &cfg, "--format", "json"], &[]))).unwrap();
    assert_eq!(j["rows"].as_array().unwrap().len(), 21);
}

#[test]
fn scan_workers_do_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", &scan_spec());
    let one = dir.path().join("one.csv");
    let four = dir.path().join("four.csv");
    stdout(&etsim(&["scan", "--config", &cfg, "--workers", "1", "--out", one.to_str().unwrap()], &[]));
    stdout(&etsim(&["scan", "--config", &cfg, "--workers", "4", "--out", four.to_str().unwrap()], &[]));
    let a = std::fs::read(&one).unwrap();
    assert_eq!(a, std::fs::read(&four).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().next().unwrap().ends_with(",error"));
}

#[test]
fn scan_json_metadata_and_fgr_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", &scan_spec());
    let out = stdout(&etsim(&["scan", "--config", &cfg, "--format", "json", "--fgr", "--seed", "7"], &[]));
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["metadata"]["seed"], 7);
    assert_eq!(v["metadata"]["spec_hash"].as_str().unwrap().len(), 64);
    assert!(v["columns"].as_array().unwrap().iter().any(|c| c == "k_fgr"));
    assert!(v["rows"][0]["k_fgr"].as_f64().unwrap() > 0.0);
}

#[test]
fn env_overrides_output_dir_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", &scan_spec());
    let out_dir = dir.path().join("results");
    let o = etsim(&["scan", "--config", &cfg], &[("ETSIM_OUT_DIR", &out_dir), ("ETSIM_WORKERS", Path::new("3"))]);
    let status: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(status["rows"], 5);
    assert!(out_dir.join("scan.csv").exists());

    let o = etsim(&["scan", "--config", &cfg], &[("ETSIM_WORKERS", Path::new("many"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fgr_and_steady_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "f.json", &json!({ "units": "omega", "params": params(0.6, 14), "delta_e": [0.5, 1.0, 1.5] }));
    let csv = stdout(&etsim(&["fgr", "--config", &cfg], &[]));
    assert_eq!(csv.lines().next().unwrap(), "delta_e,k_fgr,k_fgr_over_gamma");
    assert_eq!(csv.lines().count(), 4);

    let cfg = write(dir.path(), "ss.json", &json!({ "units": "omega", "params": params(0.6, 14) }));
    let v: Value = serde_json::from_str(&stdout(&etsim(&["steady", "--config", &cfg], &[]))).unwrap();
    let p_d = v["p_d"].as_f64().unwrap();
    assert!(p_d > 0.0 && p_d < 1.0);
    assert!(v["residual"].as_f64().unwrap() < 1e-8);
}

#[test]
fn emulate_and_oracle_bath_commands() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = params(0.2, 10);
    p["gamma_m"] = json!(0.0);
    let plan = json!({
        "steps": [
            { "step": "prepare", "nbar0": 0.0 },
            { "step": "rotate_x", "angle": std::f64::consts::FRAC_PI_2 },
            { "step": "displace" },
            { "step": "simulate", "times": [0.0, 1.0, 2.0] },
            { "step": "rotate_x", "angle": std::f64::consts::FRAC_PI_2 },
            { "step": "measure", "kind": "p_d" }
        ],
        "path": "ideal", "eta": 0.1, "mu": 50.0, "tol": 1e-9
    });
    let cfg = write(dir.path(), "em.json", &json!({ "units": "omega", "params": p, "plan": plan }));
    let o = etsim(&["emulate", "--config", &cfg], &[]);
    let csv = stdout(&o);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().nth(1).unwrap().ends_with(",ideal"));

    let cfg = write(
        dir.path(),
        "b.json",
        &json!({
            "units": "omega", "params": params(0.2, 5), "gamma_target": 0.05, "n_modes": 3,
            "band": [0.5, 1.5], "ncut_b": 1, "bath_nbar": 0.0, "periods": 0.5, "samples": 6
        }),
    );
    let v: Value = serde_json::from_str(&stdout(&etsim(&["oracle-bath", "--config", &cfg], &[]))).unwrap();
    assert_eq!(v["comparison"]["n_modes"], 3);
    assert_eq!(v["series"].as_array().unwrap().len(), 6);
}

#[test]
fn failures_emit_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = scan_spec();
    spec["units"] = json!("hz");
    let cfg = write(dir.path(), "bad.json", &spec);
    let o = etsim(&["scan", "--config", &cfg], &[]);
    assert_eq!(o.status.code(), Some(1));
    let e: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(e["error"]["kind"], "invalid_config");

    let o = etsim(&["steady", "--config", dir.path().join("missing.json").to_str().unwrap()], &[]);
    let e: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(e["error"]["kind"], "io_failure");

    let o = etsim(&["preset", "run", "fig9"], &[]);
    assert_eq!(o.status.code(), Some(1));

    let o = etsim(&["scan", "--bogus"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let e: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(e["error"]["kind"], "usage");
}
