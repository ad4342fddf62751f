use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sfvit(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfvit"))
        .env_remove("SFVIT_OUT_DIR")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn cfg(name: &str) -> String {
    configs().join(format!("{name}.json")).display().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn census_prints_shares_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = sfvit(dir.path(), &["census", &cfg("effvit-b1-r224")]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("PWConv") && text.contains("92.2"), "{text}");
    let j = read_json(&dir.path().join("census.json"));
    assert_eq!(j["seed"], 0);
    let m = read_json(&dir.path().join("manifest.json"));
    assert_eq!(m["command"], "census");
}

#[test]
fn census_single_kind_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = sfvit(dir.path(), &["census", &cfg("toy-pwconv"), "--json"]);
    assert!(o.status.success());
    let j: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(j["shares_percent"]["pwconv"].as_f64().unwrap(), 100.0);
}

#[test]
fn malformed_config_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"stages\": [ }").unwrap();
    let o = sfvit(dir.path(), &["census", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn quantize_then_crosscheck() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q");
    let o = sfvit(&q, &["quantize", &cfg("toy-msa"), "--calib", "synthetic:8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dump = read_json(&q.join("quant.json"));
    let cov = &dump["coverage"];
    assert!(cov["migration"].as_u64().unwrap() > 0);
    assert!(cov["shifting"].as_u64().unwrap() > 0);
    assert!(cov["log2"].as_u64().unwrap() > 0);
    assert!(dump["layers"].as_array().unwrap().iter().all(|l| l["dyadic"].is_array()));
    let i = dir.path().join("i");
    let o = sfvit(&i, &["infer", &cfg("toy-msa"), "--quant", q.to_str().unwrap(), "--mode", "crosscheck", "--inputs", "synthetic:3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("bit-exact: true"));
    assert_eq!(read_json(&i.join("infer.json"))["crosscheck"]["bit_exact"], true);
}

#[test]
fn ablation_flags_and_divisor_stress() {
    let dir = tempfile::tempdir().unwrap();
    let o = sfvit(dir.path(), &["quantize", &cfg("toy-mbconv"), "--no-migration", "--divisor", "uniform8"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("synth-variation MSE rises"));
    let dump = read_json(&dir.path().join("quant.json"));
    assert_eq!(dump["coverage"]["migration"], 0);
    let st = &dump["summary"]["divisor_stress"];
    assert!(st["uniform8"]["mean_rel_error"].as_f64().unwrap() > st["log2-4"]["mean_rel_error"].as_f64().unwrap());
}

#[test]
fn quantize_reads_tensor_directory() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("calib");
    std::fs::create_dir_all(&inputs).unwrap();
    for (i, t) in sfvit_core::quant::synthetic_inputs((3, 16, 16), 3, 9).iter().enumerate() {
        sfvit_core::tensor::write_tensor_file(t, inputs.join(format!("x{i}.tqt"))).unwrap();
    }
    let o = sfvit(&dir.path().join("q"), &["quantize", &cfg("toy-mbconv"), "--calib", inputs.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&dir.path().join("q/quant.json"))["summary"]["calibration"]["samples"], 3);
}

#[test]
fn missing_calibration_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = sfvit(dir.path(), &["quantize", &cfg("toy-mbconv"), "--calib", "/definitely/missing"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn missing_artifact_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = sfvit(dir.path(), &["infer", &cfg("toy-mbconv"), "--mode", "int", "--quant", "/no/such/quant.json"]);
    assert_eq!(o.status.code(), Some(4));
    let o = sfvit(dir.path(), &["infer", &cfg("toy-mbconv"), "--mode", "int"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn float_mode_matches_library_forward() {
    let dir = tempfile::tempdir().unwrap();
    let o = sfvit(dir.path(), &["infer", &cfg("toy-mbconv"), "--mode", "float", "--inputs", "synthetic:2"]);
    assert!(o.status.success());
    let graph = sfvit_core::model::build_model(&sfvit_core::model::ModelConfig::from_file(Path::new(&cfg("toy-mbconv"))).unwrap(), 0).unwrap();
    let x = &sfvit_core::quant::synthetic_inputs(graph.input, 2, 0)[1];
    let want = sfvit_core::model::forward_float(&graph, x).unwrap().logits;
    let got = sfvit_core::tensor::read_tensor_file(dir.path().join("logits/synthetic_0001.tqt")).unwrap().into_f32().unwrap();
    assert_eq!(got, want);
}

#[test]
fn simulate_sweep_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let o = sfvit(dir.path(), &["simulate", &cfg("effvit-b1-r288"), "--sweep", "L=8,16,32"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reports = read_json(&dir.path().join("simulate.json"));
    let fps: Vec<f64> = reports.as_array().unwrap().iter().map(|r| r["totals"]["fps"].as_f64().unwrap()).collect();
    assert_eq!(fps.len(), 3);
    assert!(fps.windows(2).all(|w| w[0] <= w[1]), "{fps:?}");
    let default = &reports[1]["totals"];
    let lat = default["latency_ms"].as_f64().unwrap();
    assert!((lat - 2.24).abs() <= 0.2 * 2.24);
}

#[test]
fn unroutable_layer_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("custom.json");
    std::fs::write(
        &model,
        r#"{"input":{"resolution":16},"stages":[{"blocks":[{"type":"stem","channels":8},{"type":"layer","kind":"hswish","name":"custom.hswish"}]}]}"#,
    )
    .unwrap();
    let o = sfvit(dir.path(), &["simulate", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("custom.hswish"));
}

#[test]
fn engine_config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let eng = dir.path().join("engine.json");
    std::fs::write(&eng, r#"{"N":8,"M":8,"T":8,"S":8,"L":16,"clock_mhz":100,"dsp_pack":2,"dram_bytes_per_cycle":"inf"}"#).unwrap();
    let o = sfvit(dir.path(), &["simulate", &cfg("toy-msa"), "--engine", eng.to_str().unwrap(), "--set", "L=4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&dir.path().join("simulate.json"));
    assert_eq!(r["config"]["L"], 4);
    assert_eq!(r["config"]["clock_mhz"], 100.0);
    let o = sfvit(dir.path(), &["simulate", &cfg("toy-msa"), "--set", "Q=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_sfvit"))
        .env("SFVIT_OUT_DIR", dir.path())
        .args(["census", &cfg("toy-mbconv")])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn runs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(sfvit(d.path(), &["quantize", &cfg("toy-msa"), "--seed", "3"]).status.success());
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("quant.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}
