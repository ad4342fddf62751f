use super::attention::attend;
use super::graph::{Activation, ModelGraph, Op};
use crate::diag::Diagnostics;
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::tensor::{conv2d_ref_with, Conv2dParams, Tensor};

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[batch, classes]`.
    pub logits: Tensor<f32>,
    pub diagnostics: Diagnostics,
}

/// Every intermediate value of one forward pass.
#[derive(Debug, Clone)]
pub struct Capture {
    /// Indexed by value id (0 is the input).
    pub values: Vec<Tensor<f32>>,
    /// Pre-activation output of each node that applies a fused activation.
    pub preact: Vec<Option<Tensor<f32>>>,
}

impl Capture {
    /// Input activation of each weighted layer, in layer order.
    pub fn layer_inputs<'a>(&'a self, graph: &ModelGraph) -> Vec<(usize, &'a Tensor<f32>)> {
        graph
            .nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Conv { layer, input } => Some((layer, &self.values[input])),
                _ => None,
            })
            .collect()
    }
}

pub fn forward_float(graph: &ModelGraph, input: &Tensor<f32>) -> Result<ForwardOutput> {
    Ok(run(Exec::Sequential, graph, input, false)?.0)
}

pub fn forward_float_capture(graph: &ModelGraph, input: &Tensor<f32>) -> Result<(ForwardOutput, Capture)> {
    let (out, cap) = run(Exec::Sequential, graph, input, true)?;
    Ok((out, cap.expect("capture requested")))
}

pub fn forward_float_with(exec: Exec, graph: &ModelGraph, input: &Tensor<f32>) -> Result<ForwardOutput> {
    Ok(run(exec, graph, input, false)?.0)
}

fn apply_bn(y: &mut [f32], oc: usize, plane: usize, bn: &super::graph::BatchNorm) {
    for (i, x) in y.iter_mut().enumerate() {
        let o = (i / plane) % oc;
        *x = (*x - bn.mean[o]) / (bn.var[o] + bn.eps).sqrt() * bn.gamma[o] + bn.beta[o];
    }
}

fn run(exec: Exec, graph: &ModelGraph, input: &Tensor<f32>, capture: bool) -> Result<(ForwardOutput, Option<Capture>)> {
    let (n, c, h, w) = input.dims4()?;
    if (c, h, w) != graph.input {
        return Err(Error::shape(format!(
            "input {:?} does not match model input {:?}",
            input.shape(),
            graph.input
        )));
    }
    let mut diag = Diagnostics::default();
    let mut values: Vec<Tensor<f32>> = Vec::with_capacity(graph.nodes.len() + 1);
    let mut preact = Vec::with_capacity(graph.nodes.len());
    values.push(input.clone());
    for node in &graph.nodes {
        let (oc, oh, ow) = node.shape;
        let mut pre = None;
        let out = match &node.op {
            Op::Conv { layer, input } => {
                let l = &graph.layers[*layer];
                let wt = l.weight.as_ref().ok_or_else(|| Error::Config(format!("`{}` has no weights", l.spec.name)))?;
                let p = Conv2dParams::new(l.spec.stride, l.spec.padding(), l.spec.groups);
                let y = conv2d_ref_with(exec, &values[*input], wt, &l.bias, p)?;
                let shape = y.shape().to_vec();
                let mut data = y.into_data();
                if let Some(bn) = &l.bn {
                    apply_bn(&mut data, oc, oh * ow, bn);
                }
                if l.act != Activation::None {
                    if capture {
                        pre = Some(Tensor::new(shape.clone(), data.clone())?);
                    }
                    data.iter_mut().for_each(|x| *x = l.act.apply(*x));
                }
                Tensor::new(shape, data)?
            }
            Op::Act { layer, input } => {
                let act = graph.layers[*layer].act;
                values[*input].map(|x| act.apply(x))
            }
            Op::Add { a, b } => {
                let (x, y) = (&values[*a], &values[*b]);
                if x.shape() != y.shape() {
                    return Err(Error::shape(format!("residual `{}` operands differ", node.name)));
                }
                Tensor::new(x.shape().to_vec(), x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect())?
            }
            Op::Attention { layer, sources } => {
                let spec = graph.layers[*layer].spec.attn.expect("attention layer carries its geometry");
                let (heads, d) = (spec.heads, spec.dim);
                let tokens = oh * ow;
                let cin = heads * d;
                let mut data = vec![0f32; n * oc * tokens];
                for b in 0..n {
                    for (s, &src) in sources.iter().enumerate() {
                        let x = values[src].data();
                        let results = exec::map_range(exec, heads, |hd| {
                            let gather = |part: usize| {
                                let mut m = vec![0f32; tokens * d];
                                for i in 0..d {
                                    let ch = hd * 3 * d + part * d + i;
                                    let plane = &x[(b * 3 * cin + ch) * tokens..][..tokens];
                                    for (t, v) in plane.iter().enumerate() {
                                        m[t * d + i] = *v;
                                    }
                                }
                                m
                            };
                            let (q, k, v) = (gather(0), gather(1), gather(2));
                            let mut o = vec![0f32; tokens * d];
                            let g = attend(&q, &k, &v, tokens, d, &mut o);
                            (o, g)
                        });
                        for (hd, (o, g)) in results.into_iter().enumerate() {
                            diag.guarded_rows += g;
                            for i in 0..d {
                                let ch = s * cin + hd * d + i;
                                let dst = &mut data[(b * oc + ch) * tokens..][..tokens];
                                for (t, v) in dst.iter_mut().enumerate() {
                                    *v = o[t * d + i];
                                }
                            }
                        }
                    }
                }
                Tensor::new(vec![n, oc, oh, ow], data)?
            }
            Op::GlobalPool { input } => {
                let x = &values[*input];
                let (_, ic, ih, iw) = x.dims4()?;
                let plane = ih * iw;
                let data = (0..n * ic)
                    .map(|i| x.data()[i * plane..][..plane].iter().sum::<f32>() / plane as f32)
                    .collect();
                Tensor::new(vec![n, ic, 1, 1], data)?
            }
        };
        preact.push(pre);
        values.push(out);
    }
    let last = values.last().expect("graph has nodes");
    let per = last.len() / n;
    let logits = Tensor::new(vec![n, per], last.data().to_vec())?;
    let cap = capture.then_some(Capture { values, preact });
    Ok((ForwardOutput { logits, diagnostics: diag }, cap))
}
