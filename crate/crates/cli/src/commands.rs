use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};
use sfvit_core::model::{build_model, forward_float, op_census, ModelConfig, ModelGraph};
use sfvit_core::quant::{
    calibrate, divisor_stress, load_quant, migration_ablation, quantize_model, save_quant, shifting_ablation,
    synthetic_inputs, DivisorMode, QuantPolicy,
};
use sfvit_core::runtime::{crosscheck, forward_int, quantize_input};
use sfvit_core::sim::{simulate, EngineConfig, SimReport};
use sfvit_core::tensor::{argmax, read_tensor_file, write_tensor_file};
use sfvit_core::{Error, Exec, Tensor};

use crate::manifest::RunManifest;
use crate::{display, Cli, Command, Divisor, Mode};

const DEFAULT_CALIB_SAMPLES: usize = 32;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Census { model, json } => census(cli, model, *json),
        Command::Quantize { model, calib, no_migration, no_shifting, divisor } => {
            quantize(cli, model, calib, !no_migration, !no_shifting, *divisor)
        }
        Command::Infer { model, quant, inputs, mode } => infer(cli, model, quant.as_deref(), inputs, *mode),
        Command::Simulate { model, engine, overrides, sweep } => {
            sim(cli, model, engine.as_deref(), overrides, sweep.as_deref())
        }
    }
}

fn load_model(path: &Path, seed: u64) -> Result<ModelGraph> {
    let cfg = ModelConfig::from_file(path)?;
    Ok(build_model(&cfg, seed)?)
}

fn write_json(dir: &Path, name: &str, v: &impl serde::Serialize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v)?).with_context(|| format!("writing {}", p.display()))?;
    Ok(p)
}

fn census(cli: &Cli, model: &Path, json_out: bool) -> Result<()> {
    let graph = load_model(model, cli.seed)?;
    let c = op_census(&graph);
    let s = c.shares();
    let report = json!({
        "model": graph.name,
        "seed": cli.seed,
        "census": c,
        "shares_percent": {"generic_conv": s[0], "pwconv": s[1], "dwconv": s[2], "matmul": s[3]},
    });
    write_json(&cli.out, "census.json", &report)?;
    RunManifest::new("census", model, &cli.out, cli.seed).write(&cli.out)?;
    if json_out {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!("model {}  ({:.3} GMACs, {:.3} GFLOPs)", graph.name, c.gmacs, c.gflops);
    println!("{:<14} {:>14} {:>8}", "kind", "MACs", "share");
    for (name, macs, share) in [
        ("GenericConv", c.generic_conv, s[0]),
        ("PWConv", c.pwconv, s[1]),
        ("DWConv", c.dwconv, s[2]),
        ("MatMul", c.matmul, s[3]),
    ] {
        println!("{name:<14} {macs:>14} {share:>7.2}%");
    }
    Ok(())
}

/// Resolves `synthetic[:count]` or a directory of `.tqt` tensors into `[1, C, H, W]` inputs.
fn resolve_inputs(
    spec: &str,
    graph: &ModelGraph,
    seed: u64,
    default_count: usize,
    fail: fn(String) -> Error,
) -> Result<Vec<(String, Tensor<f32>)>> {
    if let Some(rest) = spec.strip_prefix("synthetic") {
        let count = match rest.strip_prefix(':') {
            Some(n) => n.parse::<usize>().map_err(|_| fail(format!("invalid sample count in `{spec}`")))?,
            None if rest.is_empty() => default_count,
            None => return Err(fail(format!("unknown input source `{spec}`")).into()),
        };
        if count == 0 {
            return Err(fail("at least one input sample is required".into()).into());
        }
        return Ok(synthetic_inputs(graph.input, count, seed)
            .into_iter()
            .enumerate()
            .map(|(i, t)| (format!("synthetic_{i:04}"), t))
            .collect());
    }
    let dir = Path::new(spec);
    let entries = std::fs::read_dir(dir).map_err(|e| fail(format!("cannot read input source `{spec}`: {e}")))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tqt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(fail(format!("no .tqt tensors in `{spec}`")).into());
    }
    let (c, h, w) = graph.input;
    files
        .into_iter()
        .map(|p| {
            let t = read_tensor_file(&p)
                .and_then(|t| t.into_f32())
                .map_err(|e| fail(format!("{}: {e}", p.display())))?;
            if t.len() != c * h * w {
                return Err(fail(format!("{}: shape {:?} does not match input {:?}", p.display(), t.shape(), graph.input)).into());
            }
            let name = p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            Ok((name, t.reshape(vec![1, c, h, w])?))
        })
        .collect()
}

fn quantize(cli: &Cli, model: &Path, calib: &str, migration: bool, shifting: bool, divisor: Divisor) -> Result<()> {
    let graph = load_model(model, cli.seed)?;
    let samples = resolve_inputs(calib, &graph, cli.seed, DEFAULT_CALIB_SAMPLES, Error::Calibration)?;
    let tensors: Vec<Tensor<f32>> = samples.into_iter().map(|(_, t)| t).collect();
    let record = calibrate(&graph, &tensors, Exec::Parallel).map_err(|e| match e.class() {
        sfvit_core::ErrorClass::Other => Error::Calibration(e.to_string()),
        _ => e,
    })?;
    let mode = match divisor {
        Divisor::Uniform8 => DivisorMode::Uniform8,
        Divisor::Log2_4 => DivisorMode::Log2,
    };
    let policy = QuantPolicy { migration, shifting, divisor: mode, ..QuantPolicy::default() };
    let qm = quantize_model(&graph, &record, &policy)?;
    let coverage = qm.coverage(&graph);

    let mut warnings = Vec::new();
    if !migration {
        let a = migration_ablation(50, 100.0, cli.seed)?;
        warnings.push(format!(
            "channel-wise migration disabled: synth-variation MSE rises from {:.3e} to {:.3e} ({:.1}x)",
            a.mean_mse_with,
            a.mean_mse_without,
            a.mean_mse_without / a.mean_mse_with.max(f64::MIN_POSITIVE)
        ));
    }
    if !shifting {
        let a = shifting_ablation(50, 4.0, cli.seed)?;
        warnings.push(format!(
            "filter-wise shifting disabled: asymmetric-channel MSE rises from {:.3e} to {:.3e} ({:.1}x)",
            a.mean_mse_with,
            a.mean_mse_without,
            a.mean_mse_without / a.mean_mse_with.max(f64::MIN_POSITIVE)
        ));
    }
    let stress_u8 = divisor_stress(DivisorMode::Uniform8, policy.log2_bits, 4096, cli.seed);
    let stress_log2 = divisor_stress(DivisorMode::Log2, policy.log2_bits, 4096, cli.seed);
    let selected = if mode == DivisorMode::Uniform8 { &stress_u8 } else { &stress_log2 };
    if mode == DivisorMode::Uniform8 {
        warnings.push(format!(
            "uniform8 divisors: {} of {} stress divisors collapse to zero (division by zero); reconstruction error {:.3} vs {:.3} for log2-4",
            stress_u8.zero_divisors, stress_u8.samples, stress_u8.mean_rel_error, stress_log2.mean_rel_error
        ));
    }
    let summary = json!({
        "model": graph.name,
        "seed": cli.seed,
        "calibration": {"source": calib, "samples": record.samples},
        "policy": policy,
        "coverage": coverage,
        "divisor_stress": {
            "selected": selected,
            "uniform8": stress_u8,
            "log2-4": stress_log2,
        },
        "warnings": warnings,
    });
    let path = save_quant(&cli.out, &graph, &qm, summary.clone())?;
    let mut m = RunManifest::new("quantize", model, &cli.out, cli.seed);
    m.inputs = Some(calib.to_string());
    m.overrides = [(!migration).then_some("--no-migration"), (!shifting).then_some("--no-shifting")]
        .into_iter()
        .flatten()
        .map(String::from)
        .chain([format!("--divisor={}", if mode == DivisorMode::Uniform8 { "uniform8" } else { "log2-4" })])
        .collect();
    m.write(&cli.out)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {}", display(&path));
    println!(
        "coverage: uniform layers {}, migration {}, shifting {}, log2 {}",
        coverage.uniform_layers, coverage.migration, coverage.shifting, coverage.log2
    );
    println!(
        "divisor stress ({}): mean relative error {:.4}, zero divisors {}",
        if mode == DivisorMode::Uniform8 { "uniform8" } else { "log2-4" },
        selected.mean_rel_error,
        selected.zero_divisors
    );
    Ok(())
}

fn infer(cli: &Cli, model: &Path, quant: Option<&Path>, inputs: &str, mode: Mode) -> Result<()> {
    let graph = load_model(model, cli.seed)?;
    let samples = resolve_inputs(inputs, &graph, cli.seed, 4, Error::Config)?;
    let logits_dir = cli.out.join("logits");
    std::fs::create_dir_all(&logits_dir)?;
    let qm = match mode {
        Mode::Float => None,
        Mode::Int | Mode::Crosscheck => {
            let p = quant.ok_or_else(|| Error::Artifact(format!("--mode {mode:?} needs --quant").to_lowercase()))?;
            Some(load_quant(p, &graph)?)
        }
    };
    let mut results = Vec::new();
    let mut diag = sfvit_core::Diagnostics::default();
    let (mut bit_exact, mut mismatches, mut boundaries) = (true, 0usize, 0usize);
    for (name, x) in &samples {
        let (logits, top1) = match &qm {
            None => {
                let out = forward_float(&graph, x)?;
                diag.merge(&out.diagnostics);
                write_tensor_file(&out.logits, logits_dir.join(format!("{name}.tqt")))?;
                let top1 = argmax(out.logits.data());
                (out.logits.data().iter().map(|&v| json!(v)).collect::<Vec<Value>>(), top1)
            }
            Some(qm) => {
                let q = quantize_input(qm, x)?;
                let out = forward_int(&graph, qm, &q)?;
                diag.merge(&out.diagnostics);
                if mode == Mode::Crosscheck {
                    let cc = crosscheck(Exec::Parallel, &graph, qm, &q)?;
                    bit_exact &= cc.bit_exact;
                    mismatches += cc.mismatches.iter().sum::<usize>();
                    boundaries = cc.boundaries;
                }
                write_tensor_file(&out.logits, logits_dir.join(format!("{name}.tqt")))?;
                let top1 = argmax(out.logits.data());
                (out.logits.data().iter().map(|&v| json!(v)).collect(), top1)
            }
        };
        results.push(json!({"input": name, "top1": top1, "logits": logits}));
    }
    let mut report = json!({
        "model": graph.name,
        "mode": format!("{mode:?}").to_lowercase(),
        "seed": cli.seed,
        "inputs": samples.len(),
        "results": results,
        "diagnostics": diag,
    });
    if mode == Mode::Crosscheck {
        report["crosscheck"] = json!({"bit_exact": bit_exact, "mismatches": mismatches, "boundaries": boundaries});
    }
    write_json(&cli.out, "infer.json", &report)?;
    let mut m = RunManifest::new("infer", model, &cli.out, cli.seed);
    m.inputs = Some(inputs.to_string());
    m.overrides = vec![format!("--mode={}", report["mode"].as_str().unwrap_or_default())];
    if let Some(q) = quant {
        m.overrides.push(format!("--quant={}", display(q)));
    }
    m.write(&cli.out)?;
    println!("{} inputs, mode {}", samples.len(), report["mode"].as_str().unwrap_or_default());
    if mode == Mode::Crosscheck {
        println!("bit-exact: {bit_exact} ({mismatches} mismatches over {boundaries} boundaries per input)");
    }
    Ok(())
}

fn sim(cli: &Cli, model: &Path, engine: Option<&Path>, overrides: &[String], sweep: Option<&str>) -> Result<()> {
    let graph = load_model(model, cli.seed)?;
    let mut cfg = match engine {
        Some(p) => EngineConfig::from_file(p)?,
        None => EngineConfig::default(),
    };
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let configs = match sweep {
        None => vec![cfg],
        Some(s) => {
            let (k, vals) = s.split_once('=').ok_or_else(|| Error::Config(format!("sweep `{s}` is not key=a,b,c")))?;
            vals.split(',')
                .map(|v| {
                    let mut c = cfg;
                    c.set(k.trim(), v.trim())?;
                    Ok(c)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let reports: Vec<SimReport> = configs.iter().map(|c| simulate(&graph, c)).collect::<sfvit_core::Result<_>>()?;
    if sweep.is_some() {
        write_json(&cli.out, "simulate.json", &reports)?;
    } else {
        write_json(&cli.out, "simulate.json", &reports[0])?;
    }
    let mut m = RunManifest::new("simulate", model, &cli.out, cli.seed);
    m.inputs = engine.map(display);
    m.overrides = overrides.to_vec();
    m.overrides.extend(sweep.map(|s| format!("--sweep={s}")));
    m.write(&cli.out)?;
    println!("{:<18} {:>4} {:>10} {:>10} {:>9} {:>9} {:>8}", "model", "L", "cycles", "latency_ms", "fps", "gops", "gops/dsp");
    for r in &reports {
        let t = &r.totals;
        println!(
            "{:<18} {:>4} {:>10} {:>10.4} {:>9.1} {:>9.1} {:>8.4}",
            r.model, r.config.l, t.cycles, t.latency_ms, t.fps, t.gops, t.gops_per_dsp
        );
    }
    Ok(())
}
