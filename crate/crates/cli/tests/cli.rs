use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn repo(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(path)
}

fn kittensim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kittensim"))
        .args(args)
        .env_remove("KITTENSIM_CALIBRATION")
        .output()
        .expect("spawn kittensim")
}

fn json(args: &[&str]) -> Value {
    let out = kittensim(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON report")
}

fn scenario(name: &str) -> String {
    repo(&format!("scenarios/{name}.json")).display().to_string()
}

#[test]
fn envelope_fields() {
    let v = json(&["--seed", "7", "audit-layout", "--rows", "32", "--cols", "64"]);
    assert_eq!(v["command"], "audit-layout");
    assert_eq!(v["seed"], 7);
    assert!(v["tool_version"].is_string());
    assert!(v["config"].is_object());
    assert!(v["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn audit_conflict_ways() {
    for (mode, way) in [("naive", 8), ("sw32", 4), ("sw64", 2), ("sw128", 1)] {
        let v = json(&[
            "audit-layout",
            "--rows",
            "32",
            "--cols",
            "64",
            "--dtype",
            "bf16",
            "--mode",
            mode,
            "--pattern",
            "tensorcore",
        ]);
        assert_eq!(v["results"]["conflicts"]["max_way"], way, "{mode}");
        assert_eq!(v["results"]["bijective"], true);
    }
    let v = json(&["audit-layout", "--rows", "32", "--cols", "64"]);
    assert_eq!(v["results"]["selected"], "sw128");
}

#[test]
fn audit_rejects_unaligned_width() {
    let out = kittensim(&["audit-layout", "--rows", "16", "--cols", "24", "--dtype", "bf16"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiple of 32 bytes"));
}

#[test]
fn run_kernel_examples() {
    let v = json(&["run-kernel", "gemm", "--m", "128", "--n", "128", "--k", "128"]);
    assert!(v["results"]["errors"]["max_abs_error"].as_f64().unwrap() <= 1e-4);
    assert_eq!(v["results"]["passed"], true);

    let v = json(&["run-kernel", "attention", "--batch", "1", "--heads", "1", "--n", "384", "--d", "64"]);
    assert!(v["results"]["errors"]["max_abs_error"].as_f64().unwrap() <= 1e-5);

    let v = json(&["run-kernel", "attention", "--dtype", "bf16"]);
    assert!(v["results"]["errors"]["rel_fro_error"].as_f64().unwrap() <= 2e-2);

    let v = json(&["run-kernel", "rotary", "--identity-tables"]);
    assert_eq!(v["results"]["errors"]["max_abs_error"].as_f64().unwrap(), 0.0);
}

#[test]
fn run_kernel_config_file_and_save_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("k.json");
    std::fs::write(&cfg, r#"{"m": 64, "n": 128, "k": 64, "backend": "threads"}"#).unwrap();
    let save = dir.path().join("out");
    let v = json(&[
        "run-kernel",
        "gemm",
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "64",
        "--save-dir",
        save.to_str().unwrap(),
    ]);
    assert_eq!(v["config"]["settings"]["m"], 64);
    assert_eq!(v["config"]["settings"]["n"], 64);
    assert_eq!(v["results"]["shapes"]["C"], serde_json::json!([1, 1, 64, 64]));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(save.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest, v["results"]);
    assert!(save.join("output.npy").metadata().unwrap().len() > 64 * 64 * 4);

    std::fs::write(&cfg, r#"{"mm": 64}"#).unwrap();
    assert!(!kittensim(&["run-kernel", "gemm", "--config", cfg.to_str().unwrap()])
        .status
        .success());
}

#[test]
fn simulate_throughput_rises_with_stages() {
    let v = json(&["simulate", "--kernel", "gemm", "--stages", "1,2,3,4", "--workers", "2"]);
    let t: Vec<f64> = v["results"]["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["throughput"].as_f64().unwrap())
        .collect();
    assert_eq!(t.len(), 4);
    assert!(t.windows(2).all(|w| w[1] > w[0]), "{t:?}");
    assert!(t[3] / t[0] >= 1.5);
}

#[test]
fn simulate_reports_bad_points_and_continues() {
    let v = kittensim(&["simulate", "--stages", "0,2", "--workers", "2"]);
    assert!(!v.status.success());
    let v: Value = serde_json::from_slice(&v.stdout).unwrap();
    let points = v["results"]["points"].as_array().unwrap();
    assert!(points[0]["error"].is_string());
    assert!(points[1]["throughput"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_needs_profile_for_other_kernels() {
    assert!(!kittensim(&["simulate", "--kernel", "attention"]).status.success());
    let profile = repo("profiles/gemm.json");
    let v = json(&[
        "simulate",
        "--kernel",
        "rotary",
        "--profile",
        profile.to_str().unwrap(),
        "--stages",
        "2",
    ]);
    assert!(v["results"]["points"][0]["throughput"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_writes_chrome_traces() {
    let dir = tempfile::tempdir().unwrap();
    json(&["simulate", "--stages", "1,2", "--trace-dir", dir.path().to_str().unwrap()]);
    for s in [1, 2] {
        let text = std::fs::read_to_string(dir.path().join(format!("gemm-s{s}-w2.json"))).unwrap();
        let trace: Value = serde_json::from_str(&text).unwrap();
        assert!(trace["traceEvents"].as_array().is_some_and(|e| !e.is_empty()));
    }
}

#[test]
fn simulate_occupancy() {
    let v = json(&["simulate", "--occupancy", &scenario("occupancy")]);
    let r = &v["results"];
    assert_eq!(r["lcsf_unimodal"], true);
    assert_eq!(r["lcsf_interior_max"], true);
    assert_eq!(r["lcsf_dominates"], true);
}

#[test]
fn grid_gemm_l2() {
    let v = json(&["grid", &scenario("gemm-l2")]);
    let orders = v["results"]["orders"].as_array().unwrap();
    let hbm = |i: usize| orders[i]["report"]["hbm_bytes"].as_u64().unwrap();
    assert_eq!(hbm(0), 33_554_432);
    assert_eq!(hbm(1), 136_314_880);
    assert_eq!(v["results"]["best"], "super_grouped(8)");
}

#[test]
fn grid_attention_l2() {
    let v = json(&["grid", &scenario("attention-l2")]);
    let orders = v["results"]["orders"].as_array().unwrap();
    assert!(orders[0]["report"]["hbm_bytes"].as_u64().unwrap() < orders[1]["report"]["hbm_bytes"].as_u64().unwrap());
}

#[test]
fn grid_unbounded_l2_equalizes_orders() {
    let v = json(&["grid", "--unbounded-l2", &scenario("gemm-l2")]);
    let orders = v["results"]["orders"].as_array().unwrap();
    assert_eq!(orders[0]["report"]["hbm_bytes"], orders[1]["report"]["hbm_bytes"]);
    assert!(!kittensim(&["grid", "--unbounded-l2", &scenario("persistent-ksweep")])
        .status
        .success());
}

#[test]
fn grid_ksweep() {
    let v = json(&["grid", &scenario("persistent-ksweep")]);
    let adv: Vec<f64> = v["results"]["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["advantage"].as_f64().unwrap())
        .collect();
    assert!(adv.iter().all(|&a| a >= 1.0));
    assert!(adv.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn grid_rejects_other_files() {
    assert!(!kittensim(&["grid", &scenario("occupancy")]).status.success());
}

#[test]
fn cost_gemm_golden() {
    let v = json(&["cost", "--gemm", "4096,4096,4096"]);
    let r = &v["results"];
    assert_eq!(r["bound_by"], "Tensor");
    let overall = r["overall"].as_f64().unwrap();
    assert!((overall - 1.3991141446533252e-4).abs() < 1e-15, "{overall}");
    assert!(!kittensim(&["cost", "--gemm", "1,2"]).status.success());
    assert!(!kittensim(&["cost", "--profile", repo("profiles/gemm.json").to_str().unwrap()])
        .status
        .success());
}

#[test]
fn calibration_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let cal = dir.path().join("cal.json");
    let base = json(&["cost", "--gemm", "4096,4096,4096"]);
    std::fs::copy(repo("calibration/h100.json"), &cal).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_kittensim"))
        .args(["cost", "--gemm", "4096,4096,4096"])
        .env("KITTENSIM_CALIBRATION", &cal)
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["results"], base["results"]);

    std::fs::write(&cal, "{}").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_kittensim"))
        .args(["cost", "--gemm", "1,1,1"])
        .env("KITTENSIM_CALIBRATION", &cal)
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn no_wall_time_is_byte_identical() {
    let args = ["--no-wall-time", "--seed", "3", "run-kernel", "attention", "--backend", "random"];
    let a = kittensim(&args);
    let b = kittensim(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(v["wall_time_s"].is_null());
}

#[test]
fn parallel_matches_sequential() {
    for args in [
        vec!["simulate", "--stages", "1,2,3,4", "--workers", "1,2,3"],
        vec!["grid", "SCENARIO"],
    ] {
        let gemm = scenario("gemm-l2");
        let args: Vec<&str> = args.iter().map(|a| if *a == "SCENARIO" { gemm.as_str() } else { a }).collect();
        let mut seq = vec!["--no-wall-time"];
        seq.extend(&args);
        let mut par = vec!["--no-wall-time", "--parallel", "4"];
        par.extend(&args);
        assert_eq!(kittensim(&seq).stdout, kittensim(&par).stdout, "{args:?}");
    }
}

#[test]
fn csv_output_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = kittensim(&[
        "--format",
        "csv",
        "--out",
        out.to_str().unwrap(),
        "grid",
        &scenario("persistent-ksweep"),
    ]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rdr.headers().unwrap().get(0), Some("k"));
    assert_eq!(rdr.records().count(), 5);
}
