use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::config::EngineConfig;
use super::cost::{ceil_log2, is_dense};
use super::schedule::{schedule_chain, schedule_dense, schedule_depthwise, schedule_intra_layer, schedule_pool, Segment};
use super::timeline::{Engine, Timeline};
use crate::error::{Error, Result};
use crate::model::{layer_macs, op_census, BlockKind, LayerKind, ModelGraph, Op};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub kind: String,
    pub engines: Vec<String>,
    pub cycles: u64,
    pub macs: u64,
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineReport {
    pub engine: Engine,
    pub busy_cycles: u64,
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub cycles: u64,
    pub serial_cycles: u64,
    pub latency_ms: f64,
    pub fps: f64,
    pub macs: u64,
    pub gops: f64,
    pub peak_gops: f64,
    pub dsp: usize,
    pub gops_per_dsp: f64,
    pub overlap_saved_cycles: u64,
    /// Multiplier slots spent on padding, idle lanes and auxiliary work.
    pub padding_waste_macs: i64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub model: String,
    pub config: EngineConfig,
    pub per_layer: Vec<LayerReport>,
    pub engines: Vec<EngineReport>,
    pub totals: Totals,
    #[serde(skip)]
    pub timeline: Timeline,
}

/// Cycles charged once per layer for the adder-tree fill and the requantization stage.
pub fn layer_overhead(cfg: &EngineConfig) -> u64 {
    ceil_log2(cfg.t.max(cfg.n)) + cfg.requant_depth
}

fn check_routable(graph: &ModelGraph) -> Result<()> {
    for l in &graph.layers {
        if matches!(l.spec.kind, LayerKind::ReLU | LayerKind::Hswish) {
            return Err(Error::Unroutable {
                layer: l.spec.name.clone(),
                kind: format!("standalone {} has no engine", l.spec.kind.name()),
            });
        }
    }
    Ok(())
}

/// Splits the graph into schedulable segments in execution order.
fn segments(graph: &ModelGraph, cfg: &EngineConfig) -> Result<Vec<Segment>> {
    check_routable(graph)?;
    let mut chained: HashSet<usize> = HashSet::new();
    let mut chain_start = std::collections::HashMap::new();
    let mut msa_of = std::collections::HashMap::new();
    for b in &graph.blocks {
        match (b.kind, b.layers.as_slice()) {
            (BlockKind::MBConv, &[a, d, c]) => {
                chain_start.insert(a, (Some(a), d, c));
                chained.extend([d, c]);
            }
            (BlockKind::DSConv, &[d, c]) => {
                chain_start.insert(d, (None, d, c));
                chained.insert(c);
            }
            (BlockKind::MSA, &[_, d, c, t, _]) => {
                chain_start.insert(d, (None, d, c));
                chained.insert(c);
                msa_of.insert(t, b);
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    for (i, node) in graph.nodes.iter().enumerate() {
        match &node.op {
            Op::Conv { layer, .. } => {
                if let Some(&(pw1, dw, pw2)) = chain_start.get(layer) {
                    out.push(schedule_chain(graph, pw1, dw, pw2, cfg, None)?);
                } else if chained.contains(layer) {
                } else if is_dense(&graph.layers[*layer].spec) {
                    out.push(schedule_dense(graph, *layer, cfg)?);
                } else {
                    out.push(schedule_depthwise(graph, *layer, cfg)?);
                }
            }
            Op::Attention { layer, .. } => {
                let block = msa_of
                    .get(layer)
                    .ok_or_else(|| Error::Schedule(format!("attention `{}` is outside an MSA block", node.name)))?;
                out.push(schedule_intra_layer(graph, block, cfg)?);
            }
            Op::GlobalPool { input } => out.push(schedule_pool(graph, i, *input, cfg)),
            // residual adds ride on the requantization stage of the producing layer
            Op::Add { .. } => {}
            Op::Act { layer, .. } => {
                return Err(Error::Unroutable {
                    layer: graph.layers[*layer].spec.name.clone(),
                    kind: "standalone activation".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Runs the whole model through the scheduler and summarizes it.
pub fn simulate(graph: &ModelGraph, cfg: &EngineConfig) -> Result<SimReport> {
    cfg.validate()?;
    let overhead = layer_overhead(cfg);
    let mut tl = Timeline::default();
    let mut now = 0u64;
    let mut serial = 0u64;
    for seg in segments(graph, cfg)? {
        seg.timeline.validate()?;
        let gap = overhead * seg.nodes.len() as u64;
        serial += seg.serial + gap;
        let span = seg.makespan();
        tl.append(seg.timeline.shifted(now));
        now += span + gap;
    }
    let violations = tl.violations();
    if let Some(v) = violations.first() {
        return Err(Error::Schedule(v.clone()));
    }
    let cycles = now.max(1);
    let total_mults = cfg.total_multipliers() as f64;
    let mut per_layer = Vec::new();
    for (i, node) in graph.nodes.iter().enumerate() {
        let ops: Vec<_> = tl.ops.iter().filter(|o| o.node == i).collect();
        if ops.is_empty() {
            continue;
        }
        let start = ops.iter().map(|o| o.start).min().unwrap_or(0);
        let finish = ops.iter().map(|o| o.finish).max().unwrap_or(0);
        let span = finish - start + overhead;
        let engines: BTreeSet<Engine> = ops.iter().map(|o| o.engine).collect();
        let (kind, macs) = match &node.op {
            Op::Conv { layer, .. } | Op::Attention { layer, .. } => {
                let s = &graph.layers[*layer].spec;
                (s.kind.name().to_string(), layer_macs(s))
            }
            Op::GlobalPool { .. } => ("GlobalPool".into(), 0),
            _ => ("Elementwise".into(), 0),
        };
        per_layer.push(LayerReport {
            name: node.name.clone(),
            kind,
            engines: engines.iter().map(|e| e.name().to_string()).collect(),
            cycles: span,
            macs,
            utilization: macs as f64 / (span as f64 * total_mults),
        });
    }
    let engines: Vec<EngineReport> = Engine::ALL
        .iter()
        .map(|&e| {
            let busy = tl.busy(e);
            EngineReport { engine: e, busy_cycles: busy, utilization: busy as f64 / cycles as f64 }
        })
        .collect();
    let l = cfg.l as i64;
    let capacity = tl.busy(Engine::Mat) as i64 * (cfg.t * cfg.s) as i64 * l
        + tl.busy(Engine::Rmac) as i64 * (cfg.n * cfg.m) as i64 * l
        + tl.busy(Engine::AdderTree) as i64 * cfg.fanin() as i64 * l;
    let macs = op_census(graph).total_macs;
    let latency_ms = cycles as f64 / (cfg.clock_mhz * 1e3);
    let gops = 2.0 * macs as f64 / (latency_ms * 1e-3) / 1e9;
    let dsp = cfg.dsp_count();
    Ok(SimReport {
        model: graph.name.clone(),
        config: *cfg,
        per_layer,
        engines,
        totals: Totals {
            cycles,
            serial_cycles: serial,
            latency_ms,
            fps: 1e3 / latency_ms,
            macs,
            gops,
            peak_gops: cfg.peak_gops(),
            dsp,
            gops_per_dsp: gops / dsp as f64,
            overlap_saved_cycles: serial.saturating_sub(cycles),
            padding_waste_macs: capacity - macs as i64,
            violations: violations.len(),
        },
        timeline: tl,
    })
}
