//! Float (f64) simulation of the quantized model: every tensor is dequantized
//! and the reference operators run on real values. Integers are recovered only
//! where the integer pipeline requantizes, then the same rounding rules apply.

use serde::{Deserialize, Serialize};

use super::attention::divide;
use super::forward::forward_int_trace;
use super::requant::{clip, requant_value, rescale};
use crate::diag::Diagnostics;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{ModelGraph, Op};
use crate::quant::{quantize_value, NodeQuant, QuantModel, ValueQuant};
use crate::tensor::ops::{conv2d_kernel, ConvGeom};
use crate::tensor::{Conv2dParams, Tensor};

fn deq(t: &Tensor<i32>, q: &ValueQuant) -> Vec<f64> {
    let (_, c, h, w) = t.dims4().expect("values are NCHW");
    let plane = h * w;
    t.data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v as f64 * q.scale((i / plane) % c) as f64)
        .collect()
}

fn recover(real: f64, scale: f64) -> i64 {
    (real / scale).round() as i64
}

/// Simulated value tensors (index = value id) for an integer input.
pub fn forward_fakequant(graph: &ModelGraph, qm: &QuantModel, input: &Tensor<i8>) -> Result<(Vec<Tensor<i32>>, Diagnostics)> {
    super::forward::validate(graph, qm)?;
    let (n, _, _, _) = input.dims4()?;
    let mut diag = Diagnostics::default();
    let mut values: Vec<Tensor<i32>> = vec![input.map(|v| v as i32)];
    for (i, node) in graph.nodes.iter().enumerate() {
        let outq = &qm.values[i + 1];
        let (oc, oh, ow) = node.shape;
        let plane = oh * ow;
        let out: Vec<i32> = match (&node.op, &qm.nodes[i]) {
            (Op::Conv { layer, input }, NodeQuant::Conv(cq)) => {
                let l = &graph.layers[*layer];
                let inq = &qm.values[*input];
                let x = deq(&values[*input], inq);
                let wq = cq.weights.as_ref().expect("validated");
                let per = wq.len() / oc;
                let w: Vec<f64> = wq
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| v as f64 * cq.weight_scales[k / per] as f64)
                    .collect();
                let acc_scale: Vec<f64> =
                    (0..oc).map(|o| inq.scale(o) as f64 * cq.weight_scales[o] as f64).collect();
                let bias: Vec<f64> = (0..oc).map(|o| cq.bias[o] as f64 * acc_scale[o]).collect();
                let p = Conv2dParams::new(l.spec.stride, l.spec.padding(), l.spec.groups);
                let g = ConvGeom::resolve(values[*input].shape(), wq.shape(), p)?;
                let y = conv2d_kernel::<f64, f64, f64>(Exec::Sequential, &g, &x, &w, Some(&bias));
                y.iter()
                    .enumerate()
                    .map(|(k, &real)| {
                        let o = (k / plane) % oc;
                        let acc = recover(real, acc_scale[o]);
                        match &cq.pre_scales {
                            None => requant_value(acc, cq.requant[o], outq.bits, true) as i32,
                            Some(pre) => {
                                let q = requant_value(acc, cq.requant[o], 8, true);
                                let a = cq.act.apply_f64(q as f64 * pre[o] as f64) - outq.offset(o) as f64;
                                quantize_value(a, outq.scale(o) as f64, outq.bits, true) as i32
                            }
                        }
                    })
                    .collect()
            }
            (Op::Act { input, .. }, NodeQuant::Act(a)) => {
                let s_in = qm.values[*input].scale(0) as f64;
                values[*input]
                    .data()
                    .iter()
                    .map(|&v| quantize_value(a.act.apply_f64(v as f64 * s_in), outq.scale(0) as f64, outq.bits, true) as i32)
                    .collect()
            }
            (Op::Add { a, b }, NodeQuant::Add(aq)) => {
                let (sa, sb) = (qm.values[*a].scale(0) as f64, qm.values[*b].scale(0) as f64);
                let xa = deq(&values[*a], &qm.values[*a]);
                let xb = deq(&values[*b], &qm.values[*b]);
                xa.iter()
                    .zip(&xb)
                    .map(|(&p, &q)| {
                        clip(rescale(recover(p, sa), aq.a) + rescale(recover(q, sb), aq.b), outq.bits, true) as i32
                    })
                    .collect()
            }
            (Op::GlobalPool { input }, NodeQuant::Pool(pq)) => {
                let inq = &qm.values[*input];
                let x = deq(&values[*input], inq);
                let (_, ic, ih, iw) = values[*input].dims4()?;
                let pl = ih * iw;
                (0..n * ic)
                    .map(|k| {
                        let s: f64 = x[k * pl..][..pl].iter().sum();
                        requant_value(recover(s, inq.scale(0) as f64), pq.requant, outq.bits, true) as i32
                    })
                    .collect()
            }
            (Op::Attention { sources, .. }, NodeQuant::Attention(aq)) => {
                let (heads, d) = (aq.heads, aq.dim);
                let cin = heads * d;
                let mut data = vec![0i32; n * oc * plane];
                for b in 0..n {
                    for (s, &src) in sources.iter().enumerate() {
                        let p = &aq.sources[s];
                        let si = p.s_in as f64;
                        let x = deq(&values[src], &qm.values[src]);
                        for hd in 0..heads {
                            let at = |part: usize, j: usize, t: usize| x[(b * 3 * cin + hd * 3 * d + part * d + j) * plane + t];
                            // step i: KᵀV on real values, requantized
                            let mut kv = vec![0f64; d * d];
                            let mut ksum = vec![0f64; d];
                            for t in 0..plane {
                                for ii in 0..d {
                                    let k = at(1, ii, t).max(0.0);
                                    ksum[ii] += k;
                                    for j in 0..d {
                                        kv[ii * d + j] += k * at(2, j, t);
                                    }
                                }
                            }
                            let kv_deq: Vec<f64> = kv
                                .iter()
                                .map(|&r| requant_value(recover(r, si * si), p.rq_kv, 8, true) as f64 * p.s_kv as f64)
                                .collect();
                            // step ii: k_sum kept exact on the K grid
                            let ksum: Vec<f64> = ksum.iter().map(|&r| recover(r, si) as f64 * si).collect();
                            for t in 0..plane {
                                let mut den = 0f64;
                                let mut num = vec![0f64; d];
                                for ii in 0..d {
                                    let q = at(0, ii, t).max(0.0);
                                    den += q * ksum[ii];
                                    for j in 0..d {
                                        num[j] += q * kv_deq[ii * d + j];
                                    }
                                }
                                let x_int = recover(den, si * si);
                                for j in 0..d {
                                    let d16 = requant_value(recover(num[j], si * p.s_kv as f64), p.rq_d, 16, true);
                                    let o = divide(d16, x_int, p, aq.divisor, aq.rounding, &mut diag);
                                    data[(b * oc + s * cin + hd * d + j) * plane + t] = o as i32;
                                }
                            }
                        }
                    }
                }
                data
            }
            _ => return Err(Error::Artifact(format!("layer `{}`: parameter kind mismatch", node.name))),
        };
        let shape = if matches!(node.op, Op::GlobalPool { .. }) { vec![n, oc, 1, 1] } else { vec![n, oc, oh, ow] };
        values.push(Tensor::new(shape, out)?);
    }
    Ok((values, diag))
}

/// Outcome of comparing the integer pipeline against the fake-quant simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub bit_exact: bool,
    /// Mismatching elements per value id.
    pub mismatches: Vec<usize>,
    pub boundaries: usize,
}

pub fn crosscheck(exec: Exec, graph: &ModelGraph, qm: &QuantModel, input: &Tensor<i8>) -> Result<CrossCheck> {
    let (_, int_vals) = forward_int_trace(exec, graph, qm, input)?;
    let (fake_vals, _) = forward_fakequant(graph, qm, input)?;
    let mismatches: Vec<usize> = int_vals
        .iter()
        .zip(&fake_vals)
        .map(|(a, b)| a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count())
        .collect();
    Ok(CrossCheck {
        bit_exact: mismatches.iter().all(|&m| m == 0),
        boundaries: mismatches.len(),
        mismatches,
    })
}
