use serde::{Deserialize, Serialize};

use super::calib::CalibRecord;
use super::dyadic::{dyadic_approx, Dyadic};
use super::migration::{apply_channel_migration, compute_migration_factors};
use super::search::scale_search;
use super::shift::{compute_filter_shift_with, update_bias_for_shift, ShiftRule};
use super::uniform::quantize_value;
use crate::error::{Error, Result};
use crate::model::{fold_bn, Activation, BlockKind, LayerKind, ModelGraph, Op};
use crate::runtime::Log2Rounding;
use crate::tensor::{ChannelStats, Tensor};

/// How attention divisors are represented before the division.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivisorMode {
    #[serde(rename = "uniform8")]
    Uniform8,
    #[default]
    #[serde(rename = "log2-4")]
    Log2,
}

impl DivisorMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uniform8" => Some(DivisorMode::Uniform8),
            "log2-4" | "log2" => Some(DivisorMode::Log2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantPolicy {
    pub migration: bool,
    pub shifting: bool,
    pub divisor: DivisorMode,
    pub shift_rule: ShiftRule,
    pub log2_rounding: Log2Rounding,
    pub log2_bits: u32,
    /// Percentile/MSE search for layer-wise activation scales instead of plain max.
    pub search_scales: bool,
    pub dyadic_bits: u32,
}

impl Default for QuantPolicy {
    fn default() -> Self {
        Self {
            migration: true,
            shifting: true,
            divisor: DivisorMode::Log2,
            shift_rule: ShiftRule::Midpoint,
            log2_rounding: Log2Rounding::Nearest,
            log2_bits: 4,
            search_scales: true,
            dyadic_bits: 16,
        }
    }
}

/// Grid of one value: `real ≈ q · scale[c] + offset[c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueQuant {
    pub scales: Vec<f32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub offsets: Vec<f32>,
    pub bits: u32,
}

impl ValueQuant {
    fn layer(scale: f32, bits: u32) -> Self {
        Self { scales: vec![scale], offsets: Vec::new(), bits }
    }

    pub fn scale(&self, c: usize) -> f32 {
        if self.scales.len() == 1 {
            self.scales[0]
        } else {
            self.scales[c]
        }
    }

    pub fn offset(&self, c: usize) -> f32 {
        self.offsets.get(c).copied().unwrap_or(0.0)
    }

    pub fn is_plain(&self) -> bool {
        self.scales.len() == 1 && self.offsets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvQuant {
    pub layer: usize,
    pub name: String,
    pub weight_scales: Vec<f32>,
    /// Filter-wise i8 weights, persisted separately in tensor files.
    #[serde(skip)]
    pub weights: Option<Tensor<i8>>,
    pub bias: Vec<i32>,
    /// Per output channel: accumulator to output grid, or to pre-activation grid when `act` is set.
    pub requant: Vec<Dyadic>,
    pub act: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_scales: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub migration: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub updated_bias: Option<Vec<f32>>,
    /// Per-channel activation tables indexed by `pre + 128`, rebuilt by [`QuantModel::prepare`].
    #[serde(skip)]
    pub lut: Vec<Vec<i8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddQuant {
    pub a: Dyadic,
    pub b: Dyadic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolQuant {
    pub requant: Dyadic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActQuant {
    pub layer: usize,
    pub act: Activation,
    #[serde(skip)]
    pub lut: Vec<i8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnSourceQuant {
    /// Shared grid of Q, K and V (the producer's output grid).
    pub s_in: f32,
    pub s_kv: f32,
    pub rq_kv: Dyadic,
    /// 16-bit dividend grid.
    pub s_d: f32,
    pub rq_d: Dyadic,
    pub e_s: i32,
    pub window: (i32, i32),
    /// Dividend to output, with the residual `s_in²/2^e_s` folded in.
    pub out_log2: Dyadic,
    pub s_x8: f32,
    pub rq_x8: Dyadic,
    pub out_u8: Dyadic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnQuant {
    pub layer: usize,
    pub name: String,
    pub heads: usize,
    pub dim: usize,
    pub divisor: DivisorMode,
    pub rounding: Log2Rounding,
    pub sources: Vec<AttnSourceQuant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum NodeQuant {
    Conv(ConvQuant),
    Act(ActQuant),
    Add(AddQuant),
    Attention(AttnQuant),
    Pool(PoolQuant),
}

/// Complete quantized artifact for one folded graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantModel {
    pub policy: QuantPolicy,
    pub calib_samples: usize,
    /// Indexed by value id.
    pub values: Vec<ValueQuant>,
    /// Parallel to graph nodes.
    pub nodes: Vec<NodeQuant>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Uniform,
    Log2,
}

/// Flat per-layer record of the quantization parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub name: String,
    pub scheme: Scheme,
    pub bits: u32,
    pub weight_scales: Vec<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub act_scale: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fused_scales: Option<Vec<f32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub migration: Option<Vec<f32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<Vec<f32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub updated_bias: Option<Vec<f32>>,
    pub dyadic: Vec<Dyadic>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub uniform_layers: usize,
    pub migration: usize,
    pub shifting: usize,
    pub log2: usize,
}

/// Activation table for one channel: `clip(round((act(q·s_pre) − offset)/s_out))`.
pub fn build_lut(act: Activation, s_pre: f32, s_out: f32, offset: f32, bits: u32) -> Vec<i8> {
    (-128i32..=127)
        .map(|q| {
            let y = act.apply_f64(q as f64 * s_pre as f64) - offset as f64;
            quantize_value(y, s_out as f64, bits, true) as i8
        })
        .collect()
}

impl QuantModel {
    /// Rebuilds derived tables (activation LUTs) from the stored scales.
    pub fn prepare(&mut self, graph: &ModelGraph) -> Result<()> {
        if self.nodes.len() != graph.nodes.len() || self.values.len() != graph.nodes.len() + 1 {
            return Err(Error::Artifact(format!(
                "artifact has {} nodes, model has {}",
                self.nodes.len(),
                graph.nodes.len()
            )));
        }
        for (i, nq) in self.nodes.iter_mut().enumerate() {
            let out = &self.values[i + 1];
            match nq {
                NodeQuant::Conv(c) => {
                    c.lut = match &c.pre_scales {
                        Some(pre) => pre
                            .iter()
                            .enumerate()
                            .map(|(o, &s)| build_lut(c.act, s, out.scale(o), out.offset(o), out.bits))
                            .collect(),
                        None => Vec::new(),
                    };
                }
                NodeQuant::Act(a) => {
                    let Op::Act { input, .. } = graph.nodes[i].op else {
                        return Err(Error::Artifact(format!("node {i} is not an activation")));
                    };
                    let inq = &self.values[input];
                    a.lut = build_lut(a.act, inq.scale(0), out.scale(0), 0.0, out.bits);
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn params(&self, graph: &ModelGraph) -> Vec<QuantParams> {
        let mut out = Vec::new();
        for (i, nq) in self.nodes.iter().enumerate() {
            match nq {
                NodeQuant::Conv(c) => {
                    let Op::Conv { input, .. } = graph.nodes[i].op else { continue };
                    let iq = &self.values[input];
                    let per_channel = iq.scales.len() > 1;
                    out.push(QuantParams {
                        name: c.name.clone(),
                        scheme: Scheme::Uniform,
                        bits: 8,
                        weight_scales: c.weight_scales.clone(),
                        act_scale: (!per_channel).then(|| iq.scales[0]),
                        fused_scales: per_channel.then(|| iq.scales.clone()),
                        migration: c.migration.clone(),
                        shift: c.shift.clone(),
                        updated_bias: c.updated_bias.clone(),
                        dyadic: c.requant.clone(),
                    });
                }
                NodeQuant::Attention(a) => {
                    let log2 = a.divisor == DivisorMode::Log2;
                    out.push(QuantParams {
                        name: format!("{}.divisor", a.name),
                        scheme: if log2 { Scheme::Log2 } else { Scheme::Uniform },
                        bits: if log2 { self.policy.log2_bits } else { 8 },
                        weight_scales: Vec::new(),
                        act_scale: Some(a.sources[0].s_in),
                        fused_scales: None,
                        migration: None,
                        shift: None,
                        updated_bias: None,
                        dyadic: a
                            .sources
                            .iter()
                            .map(|s| if log2 { s.out_log2 } else { s.out_u8 })
                            .collect(),
                    });
                }
                _ => {}
            }
        }
        out
    }

    pub fn coverage(&self, graph: &ModelGraph) -> Coverage {
        let p = self.params(graph);
        Coverage {
            uniform_layers: p.iter().filter(|r| r.scheme == Scheme::Uniform).count(),
            migration: p.iter().filter(|r| r.migration.is_some()).count(),
            shifting: p.iter().filter(|r| r.shift.is_some()).count(),
            log2: p.iter().filter(|r| r.scheme == Scheme::Log2).count(),
        }
    }

    pub fn conv(&self, node: usize) -> Option<&ConvQuant> {
        match &self.nodes[node] {
            NodeQuant::Conv(c) => Some(c),
            _ => None,
        }
    }
}

fn safe_scale(amax: f64, qmax: f64) -> f32 {
    if amax.is_finite() && amax > 1e-12 {
        (amax / qmax) as f32
    } else {
        (1.0 / qmax) as f32
    }
}

fn abs_max(s: &ChannelStats) -> f64 {
    (s.layer_max as f64).abs().max((s.layer_min as f64).abs())
}

fn qerr(layer: &str, e: impl std::fmt::Display) -> Error {
    Error::Quantization { layer: layer.to_string(), message: e.to_string() }
}

/// Accumulator magnitude bound for `fan_in` products of 8-bit operands.
pub fn accumulator_bound(fan_in: usize, bias: i64) -> i64 {
    fan_in as i64 * 128 * 128 + bias.abs()
}

/// Quantizes a graph (batch-norm is folded first when still present).
pub fn quantize_model(graph: &ModelGraph, calib: &CalibRecord, policy: &QuantPolicy) -> Result<QuantModel> {
    let folded;
    let graph = if graph.is_folded() {
        graph
    } else {
        folded = fold_bn(graph)?;
        &folded
    };
    let n_nodes = graph.nodes.len();
    if calib.values.len() != n_nodes + 1 || calib.preact.len() != n_nodes || calib.attention.len() != n_nodes {
        let missing = graph
            .nodes
            .get(calib.preact.len().min(n_nodes.saturating_sub(1)))
            .map_or("input".to_string(), |n| n.name.clone());
        return Err(Error::Quantization {
            layer: missing,
            message: "calibration statistics do not cover this layer".into(),
        });
    }
    let consumers = graph.consumers();

    // Values that get per-channel migration or a shift offset.
    let mut migrate: Vec<Option<Vec<f32>>> = vec![None; n_nodes + 1];
    let mut shift: Vec<Option<Vec<f32>>> = vec![None; n_nodes + 1];
    for block in graph.blocks.iter().filter(|b| b.kind == BlockKind::MBConv) {
        let dw = graph.node_of_layer(block.layers[1]).expect("block layer has a node");
        let pw2 = graph.node_of_layer(block.layers[2]).expect("block layer has a node");
        let Op::Conv { input: v1, .. } = graph.nodes[dw].op else { continue };
        let v2 = dw + 1;
        if policy.migration && consumers[v1] == [dw] {
            let m = compute_migration_factors(calib.value(v1)?).map_err(|e| qerr(&graph.nodes[dw].name, e))?;
            migrate[v1] = Some(m);
        }
        if policy.shifting && consumers[v2] == [pw2] {
            let c = compute_filter_shift_with(calib.value(v2)?, policy.shift_rule)
                .map_err(|e| qerr(&graph.nodes[pw2].name, e))?;
            shift[v2] = Some(c);
        }
    }

    let last = graph.output_value();
    let mut values = Vec::with_capacity(n_nodes + 1);
    for v in 0..=n_nodes {
        let st = calib.value(v)?;
        let vq = if let Some(m) = &migrate[v] {
            let amax = (0..st.channels())
                .map(|c| (st.per_channel_max[c] as f64).abs().max((st.per_channel_min[c] as f64).abs()) / m[c] as f64)
                .fold(0.0, f64::max);
            let s_a = safe_scale(amax, 127.0);
            ValueQuant { scales: m.iter().map(|&mi| s_a * mi).collect(), offsets: Vec::new(), bits: 8 }
        } else if let Some(c) = &shift[v] {
            let amax = (0..st.channels())
                .map(|ch| {
                    let (lo, hi, o) = (st.per_channel_min[ch] as f64, st.per_channel_max[ch] as f64, c[ch] as f64);
                    (hi - o).abs().max((lo - o).abs())
                })
                .fold(0.0, f64::max);
            ValueQuant { scales: vec![safe_scale(amax, 127.0)], offsets: c.clone(), bits: 8 }
        } else if v == last && v > 0 && matches!(graph.nodes[v - 1].op, Op::Conv { .. }) {
            ValueQuant::layer(safe_scale(abs_max(st), 32767.0), 16)
        } else if policy.search_scales && calib.reservoirs.get(v).is_some_and(|r| !r.is_empty()) && abs_max(st) > 1e-12 {
            let s = scale_search(&calib.reservoirs[v], 8, true)
                .map_err(|e| qerr(v.checked_sub(1).map_or("input", |i| graph.nodes[i].name.as_str()), e))?;
            ValueQuant::layer(s, 8)
        } else {
            ValueQuant::layer(safe_scale(abs_max(st), 127.0), 8)
        };
        values.push(vq);
    }

    let mut nodes = Vec::with_capacity(n_nodes);
    for (i, node) in graph.nodes.iter().enumerate() {
        let out = &values[i + 1];
        let nq = match &node.op {
            Op::Conv { layer, input } => NodeQuant::Conv(quantize_conv(
                graph,
                *layer,
                &values[*input],
                out,
                migrate[*input].as_deref(),
                calib.preact[i].as_ref(),
                policy,
            )?),
            Op::Act { layer, .. } => {
                NodeQuant::Act(ActQuant { layer: *layer, act: graph.layers[*layer].act, lut: Vec::new() })
            }
            Op::Add { a, b } => {
                let (qa, qb) = (&values[*a], &values[*b]);
                if !(qa.is_plain() && qb.is_plain() && out.is_plain()) {
                    return Err(qerr(&node.name, "residual operands must use layer-wise grids"));
                }
                let d = |s: f32| dyadic_approx(s as f64 / out.scales[0] as f64, policy.dyadic_bits);
                NodeQuant::Add(AddQuant {
                    a: d(qa.scales[0]).map_err(|e| qerr(&node.name, e))?,
                    b: d(qb.scales[0]).map_err(|e| qerr(&node.name, e))?,
                })
            }
            Op::GlobalPool { input } => {
                let iq = &values[*input];
                if !iq.is_plain() {
                    return Err(qerr(&node.name, "pool input must use a layer-wise grid"));
                }
                let (_, h, w) = graph.value_shape(*input);
                let s = iq.scales[0] as f64 / ((h * w) as f64 * out.scales[0] as f64);
                NodeQuant::Pool(PoolQuant { requant: dyadic_approx(s, policy.dyadic_bits).map_err(|e| qerr(&node.name, e))? })
            }
            Op::Attention { layer, sources } => {
                let spec = graph.layers[*layer].spec.attn.expect("attention geometry");
                let stats = calib.attention[i]
                    .as_ref()
                    .ok_or_else(|| qerr(&node.name, "missing attention statistics"))?;
                let mut qs = Vec::new();
                for (k, &src) in sources.iter().enumerate() {
                    let iq = &values[src];
                    if !iq.is_plain() {
                        return Err(qerr(&node.name, "attention operands must use a layer-wise grid"));
                    }
                    qs.push(attention_source(iq.scales[0], out.scales[0], &stats[k], policy).map_err(|e| qerr(&node.name, e))?);
                }
                NodeQuant::Attention(AttnQuant {
                    layer: *layer,
                    name: node.name.clone(),
                    heads: spec.heads,
                    dim: spec.dim,
                    divisor: policy.divisor,
                    rounding: policy.log2_rounding,
                    sources: qs,
                })
            }
        };
        nodes.push(nq);
    }
    let mut qm = QuantModel { policy: *policy, calib_samples: calib.samples, values, nodes };
    qm.prepare(graph)?;
    Ok(qm)
}

fn attention_source(
    s_in: f32,
    s_out: f32,
    st: &super::calib::AttnSourceStats,
    policy: &QuantPolicy,
) -> Result<AttnSourceQuant> {
    let bits = policy.dyadic_bits;
    let s_in64 = s_in as f64;
    let s_kv = safe_scale(st.max_kv as f64, 127.0);
    let rq_kv = dyadic_approx(s_in64 * s_in64 / s_kv as f64, bits)?;
    let s_d = safe_scale(st.max_dividend as f64, 32767.0);
    let rq_d = dyadic_approx(s_in64 * s_kv as f64 / s_d as f64, bits)?;
    let sqk = s_in64 * s_in64;
    let e_s = sqk.log2().round() as i32;
    let r = sqk / (e_s as f64).exp2();
    let span = (1i32 << policy.log2_bits) - 1;
    let e_max = if st.max_divisor > 0.0 {
        ((st.max_divisor as f64) / r).log2().ceil() as i32
    } else {
        e_s + span / 2
    };
    let window = (e_max - span, e_max);
    let out_log2 = dyadic_approx(s_d as f64 / (r * s_out as f64), bits)?;
    let s_x8 = safe_scale(st.max_divisor as f64, 255.0);
    let rq_x8 = dyadic_approx(sqk / s_x8 as f64, bits)?;
    let out_u8 = dyadic_approx(s_d as f64 / (s_x8 as f64 * s_out as f64), bits)?;
    Ok(AttnSourceQuant { s_in, s_kv, rq_kv, s_d, rq_d, e_s, window, out_log2, s_x8, rq_x8, out_u8 })
}

fn quantize_conv(
    graph: &ModelGraph,
    layer: usize,
    inq: &ValueQuant,
    outq: &ValueQuant,
    migration: Option<&[f32]>,
    preact: Option<&ChannelStats>,
    policy: &QuantPolicy,
) -> Result<ConvQuant> {
    let l = &graph.layers[layer];
    let name = &l.spec.name;
    let oc = l.spec.out_channels;
    let w = l.weight.as_ref().ok_or_else(|| qerr(name, "layer has no weights"))?;
    let is_dw = l.spec.kind == LayerKind::DWConv;
    if inq.scales.len() > 1 && !is_dw {
        return Err(qerr(name, "per-channel input grids are only supported for depthwise layers"));
    }
    if !inq.offsets.is_empty() && l.spec.kernel != 1 {
        return Err(qerr(name, "shifted inputs are only supported for 1x1 convolutions"));
    }
    let w = match migration {
        Some(m) => {
            let s_a = inq.scales[0] / m[0];
            apply_channel_migration(w, s_a, m).map_err(|e| qerr(name, e))?.0
        }
        None => w.clone(),
    };
    let per = w.len() / oc;
    let weight_scales: Vec<f32> = (0..oc)
        .map(|o| safe_scale(w.data()[o * per..][..per].iter().fold(0f64, |m, v| m.max(v.abs() as f64)), 127.0))
        .collect();
    let wq = Tensor::new(
        w.shape().to_vec(),
        w.data()
            .iter()
            .enumerate()
            .map(|(i, &v)| quantize_value(v as f64, weight_scales[i / per] as f64, 8, true) as i8)
            .collect(),
    )?;
    let weight_scales: Vec<f32> = match migration {
        Some(m) => weight_scales.iter().zip(m).map(|(&s, &mi)| s / mi).collect(),
        None => weight_scales,
    };
    let shift = (!inq.offsets.is_empty()).then(|| inq.offsets.clone());
    let bias_f = match &shift {
        Some(c) => update_bias_for_shift(&w, &l.bias, c).map_err(|e| qerr(name, e))?,
        None => l.bias.clone(),
    };
    let fan_in = per;
    let has_act = l.act != Activation::None;
    let pre_scales = if has_act {
        let st = preact.ok_or_else(|| qerr(name, "missing pre-activation statistics"))?;
        Some(
            (0..oc)
                .map(|o| {
                    let a = (st.per_channel_max[o] as f64).abs().max((st.per_channel_min[o] as f64).abs());
                    safe_scale(a, 127.0)
                })
                .collect::<Vec<f32>>(),
        )
    } else {
        None
    };
    let mut bias = Vec::with_capacity(oc);
    let mut requant = Vec::with_capacity(oc);
    for o in 0..oc {
        let acc_scale = inq.scale(o) as f64 * weight_scales[o] as f64;
        let (target, off) = match &pre_scales {
            Some(p) => (p[o] as f64, 0.0),
            None => (outq.scale(o) as f64, outq.offset(o) as f64),
        };
        let b = ((bias_f.get(o).copied().unwrap_or(0.0) as f64 - off) / acc_scale).round_ties_even();
        if !b.is_finite() || b.abs() >= (1u64 << 30) as f64 {
            return Err(qerr(name, format!("bias of filter {o} overflows the accumulator")));
        }
        let b = b as i64;
        if accumulator_bound(fan_in, b) >= 1 << 31 {
            return Err(qerr(name, "accumulator may overflow 32 bits"));
        }
        bias.push(b as i32);
        requant.push(dyadic_approx(acc_scale / target, policy.dyadic_bits).map_err(|e| qerr(name, e))?);
    }
    Ok(ConvQuant {
        layer,
        name: name.clone(),
        weight_scales,
        weights: Some(wq),
        bias,
        requant,
        act: l.act,
        pre_scales,
        migration: migration.map(<[f32]>::to_vec),
        updated_bias: shift.as_ref().map(|_| bias_f.clone()),
        shift,
        lut: Vec::new(),
    })
}
