use super::attention::attend_int;
use super::requant::{clip, requant_value, rescale};
use crate::diag::Diagnostics;
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::model::{ModelGraph, Op};
use crate::quant::{accumulator_bound, quantize_value, NodeQuant, QuantModel};
use crate::runtime::kernels::int_conv2d_with;
use crate::tensor::{Conv2dParams, Tensor};

#[derive(Debug, Clone)]
pub struct IntOutput {
    /// `[batch, classes]` logits on the output grid (16-bit values held in i32).
    pub logits: Tensor<i32>,
    pub diagnostics: Diagnostics,
}

/// Quantizes a float input onto the model's input grid.
pub fn quantize_input(qm: &QuantModel, x: &Tensor<f32>) -> Result<Tensor<i8>> {
    let s = qm.values[0].scales[0] as f64;
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model input"));
    }
    Ok(x.map(|v| quantize_value(v as f64, s, 8, true) as i8))
}

/// Structural checks run before any integer execution.
pub fn validate(graph: &ModelGraph, qm: &QuantModel) -> Result<()> {
    let bad = |name: &str, m: &str| Err(Error::Artifact(format!("layer `{name}`: {m}")));
    if qm.nodes.len() != graph.nodes.len() || qm.values.len() != graph.nodes.len() + 1 {
        return Err(Error::Artifact("artifact does not match the model graph".into()));
    }
    for (node, nq) in graph.nodes.iter().zip(&qm.nodes) {
        match (&node.op, nq) {
            (Op::Conv { layer, .. }, NodeQuant::Conv(c)) => {
                let l = &graph.layers[*layer];
                let Some(w) = &c.weights else { return bad(&node.name, "missing weights") };
                if Some(w.shape()) != l.weight.as_ref().map(|t| t.shape()) {
                    return bad(&node.name, "weight shape mismatch");
                }
                let oc = l.spec.out_channels;
                if c.bias.len() != oc || c.requant.len() != oc {
                    return bad(&node.name, "bias or requant length mismatch");
                }
                if c.pre_scales.is_some() && c.lut.len() != oc {
                    return bad(&node.name, "activation tables not prepared");
                }
                let fan_in = w.len() / oc;
                let bmax = c.bias.iter().map(|b| (*b as i64).abs()).max().unwrap_or(0);
                if accumulator_bound(fan_in, bmax) >= 1 << 31 {
                    return bad(&node.name, "accumulator may overflow 32 bits");
                }
                if c.requant.iter().any(|d| !(0..1 << 16).contains(&d.b)) {
                    return bad(&node.name, "dyadic numerator out of range");
                }
            }
            (Op::Act { .. }, NodeQuant::Act(a)) if a.lut.len() == 256 => {}
            (Op::Add { .. }, NodeQuant::Add(_)) | (Op::GlobalPool { .. }, NodeQuant::Pool(_)) => {}
            (Op::Attention { sources, .. }, NodeQuant::Attention(a)) if a.sources.len() == sources.len() => {}
            _ => return bad(&node.name, "parameter kind does not match the operation"),
        }
    }
    Ok(())
}

pub fn forward_int(graph: &ModelGraph, qm: &QuantModel, input: &Tensor<i8>) -> Result<IntOutput> {
    Ok(forward_int_trace(Exec::Sequential, graph, qm, input)?.0)
}

pub(crate) fn to_i8(t: &Tensor<i32>) -> Tensor<i8> {
    t.map(|v| v as i8)
}

/// Runs the integer pipeline and returns every value tensor (index = value id).
pub fn forward_int_trace(
    exec: Exec,
    graph: &ModelGraph,
    qm: &QuantModel,
    input: &Tensor<i8>,
) -> Result<(IntOutput, Vec<Tensor<i32>>)> {
    validate(graph, qm)?;
    let (n, c, h, w) = input.dims4()?;
    if (c, h, w) != graph.input {
        return Err(Error::shape(format!("input {:?} does not match model input {:?}", input.shape(), graph.input)));
    }
    let mut diag = Diagnostics::default();
    let mut values: Vec<Tensor<i32>> = vec![input.map(|v| v as i32)];
    for (i, node) in graph.nodes.iter().enumerate() {
        let outq = &qm.values[i + 1];
        let (oc, oh, ow) = node.shape;
        let plane = oh * ow;
        let out = match (&node.op, &qm.nodes[i]) {
            (Op::Conv { layer, input }, NodeQuant::Conv(cq)) => {
                let l = &graph.layers[*layer];
                let p = Conv2dParams::new(l.spec.stride, l.spec.padding(), l.spec.groups);
                let w = cq.weights.as_ref().expect("validated");
                let acc = int_conv2d_with(exec, &to_i8(&values[*input]), w, &cq.bias, p)?;
                let data = acc
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(k, &a)| {
                        let o = (k / plane) % oc;
                        if cq.lut.is_empty() {
                            requant_value(a as i64, cq.requant[o], outq.bits, true) as i32
                        } else {
                            let pre = requant_value(a as i64, cq.requant[o], 8, true);
                            cq.lut[o][(pre + 128) as usize] as i32
                        }
                    })
                    .collect();
                Tensor::new(acc.shape().to_vec(), data)?
            }
            (Op::Act { input, .. }, NodeQuant::Act(a)) => values[*input].map(|v| a.lut[(v + 128) as usize] as i32),
            (Op::Add { a, b }, NodeQuant::Add(aq)) => {
                let (x, y) = (&values[*a], &values[*b]);
                let data = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&p, &q)| clip(rescale(p as i64, aq.a) + rescale(q as i64, aq.b), outq.bits, true) as i32)
                    .collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            (Op::GlobalPool { input }, NodeQuant::Pool(pq)) => {
                let x = &values[*input];
                let (_, ic, ih, iw) = x.dims4()?;
                let pl = ih * iw;
                let data = (0..n * ic)
                    .map(|k| {
                        let s: i64 = x.data()[k * pl..][..pl].iter().map(|&v| v as i64).sum();
                        requant_value(s, pq.requant, outq.bits, true) as i32
                    })
                    .collect();
                Tensor::new(vec![n, ic, 1, 1], data)?
            }
            (Op::Attention { sources, .. }, NodeQuant::Attention(aq)) => {
                let (heads, d) = (aq.heads, aq.dim);
                let cin = heads * d;
                let mut data = vec![0i32; n * oc * plane];
                for b in 0..n {
                    for (s, &src) in sources.iter().enumerate() {
                        let x = values[src].data();
                        let p = &aq.sources[s];
                        let results = exec::map_range(exec, heads, |hd| {
                            let gather = |part: usize| {
                                let mut m = vec![0i8; plane * d];
                                for i in 0..d {
                                    let ch = hd * 3 * d + part * d + i;
                                    for (t, v) in x[(b * 3 * cin + ch) * plane..][..plane].iter().enumerate() {
                                        m[t * d + i] = *v as i8;
                                    }
                                }
                                m
                            };
                            let mut dg = Diagnostics::default();
                            let (o, _) = attend_int(
                                &gather(0),
                                &gather(1),
                                &gather(2),
                                plane,
                                d,
                                p,
                                aq.divisor,
                                aq.rounding,
                                &mut dg,
                            );
                            (o, dg)
                        });
                        for (hd, (o, dg)) in results.into_iter().enumerate() {
                            diag.merge(&dg);
                            for i in 0..d {
                                let ch = s * cin + hd * d + i;
                                for (t, v) in data[(b * oc + ch) * plane..][..plane].iter_mut().enumerate() {
                                    *v = o[t * d + i] as i32;
                                }
                            }
                        }
                    }
                }
                Tensor::new(vec![n, oc, oh, ow], data)?
            }
            _ => return Err(Error::Artifact(format!("layer `{}`: parameter kind mismatch", node.name))),
        };
        values.push(out);
    }
    let last = values.last().expect("graph has nodes");
    let logits = Tensor::new(vec![n, last.len() / n], last.data().to_vec())?;
    Ok((IntOutput { logits, diagnostics: diag }, values))
}
