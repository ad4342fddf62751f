use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::model::{forward_float_capture, Capture, ModelGraph, Op};
use crate::tensor::{channel_stats, ChannelStats, Tensor};

/// Reservoir budget per value across the whole calibration set.
pub const RESERVOIR_CAP: usize = 1 << 16;

/// Float extrema of the intermediate attention products of one source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttnSourceStats {
    /// max |ReLU(K)ᵀ V|.
    pub max_kv: f32,
    /// max |ReLU(Q) · ReLU(K)ᵀ V|.
    pub max_dividend: f32,
    /// max of ReLU(Q) · Σ ReLU(K).
    pub max_divisor: f32,
}

impl AttnSourceStats {
    fn merge(&mut self, o: &Self) {
        self.max_kv = self.max_kv.max(o.max_kv);
        self.max_dividend = self.max_dividend.max(o.max_dividend);
        self.max_divisor = self.max_divisor.max(o.max_divisor);
    }
}

/// Running calibration statistics over a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibRecord {
    pub samples: usize,
    /// Indexed by value id.
    pub values: Vec<ChannelStats>,
    /// Pre-activation stats per node with a fused activation.
    pub preact: Vec<Option<ChannelStats>>,
    /// Attention internals per node.
    pub attention: Vec<Option<Vec<AttnSourceStats>>>,
    /// Sub-sampled raw values per value id, used for scale search.
    #[serde(skip)]
    pub reservoirs: Vec<Vec<f32>>,
}

impl CalibRecord {
    pub fn value(&self, v: usize) -> Result<&ChannelStats> {
        self.values
            .get(v)
            .ok_or_else(|| Error::Calibration(format!("no statistics for value {v}")))
    }

    fn merge(&mut self, o: CalibRecord) -> Result<()> {
        self.samples += o.samples;
        for (a, b) in self.values.iter_mut().zip(&o.values) {
            a.merge(b)?;
        }
        for (a, b) in self.preact.iter_mut().zip(&o.preact) {
            if let (Some(a), Some(b)) = (a.as_mut(), b) {
                a.merge(b)?;
            }
        }
        for (a, b) in self.attention.iter_mut().zip(&o.attention) {
            if let (Some(a), Some(b)) = (a.as_mut(), b) {
                a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y));
            }
        }
        for (a, b) in self.reservoirs.iter_mut().zip(o.reservoirs) {
            a.extend(b);
        }
        Ok(())
    }
}

/// Float intermediates of one attention source tensor `[1, 3·heads·d, H, W]`.
pub(crate) fn attention_source_stats(x: &Tensor<f32>, heads: usize, d: usize) -> AttnSourceStats {
    let tokens = x.len() / (3 * heads * d);
    let data = x.data();
    let at = |h: usize, part: usize, i: usize, t: usize| data[(h * 3 * d + part * d + i) * tokens + t];
    let mut s = AttnSourceStats { max_kv: 0.0, max_dividend: 0.0, max_divisor: 0.0 };
    for h in 0..heads {
        let mut kv = vec![0f64; d * d];
        let mut ksum = vec![0f64; d];
        for t in 0..tokens {
            for i in 0..d {
                let k = at(h, 1, i, t).max(0.0) as f64;
                ksum[i] += k;
                for j in 0..d {
                    kv[i * d + j] += k * at(h, 2, j, t) as f64;
                }
            }
        }
        s.max_kv = s.max_kv.max(kv.iter().fold(0f64, |m, v| m.max(v.abs())) as f32);
        for t in 0..tokens {
            let mut den = 0f64;
            let mut num = vec![0f64; d];
            for i in 0..d {
                let q = at(h, 0, i, t).max(0.0) as f64;
                den += q * ksum[i];
                for j in 0..d {
                    num[j] += q * kv[i * d + j];
                }
            }
            s.max_divisor = s.max_divisor.max(den as f32);
            s.max_dividend = s.max_dividend.max(num.iter().fold(0f64, |m, v| m.max(v.abs())) as f32);
        }
    }
    s
}

fn record_one(graph: &ModelGraph, cap: &Capture, budget: usize) -> Result<CalibRecord> {
    let values = cap.values.iter().map(channel_stats).collect::<Result<Vec<_>>>()?;
    let preact = cap
        .preact
        .iter()
        .map(|p| p.as_ref().map(channel_stats).transpose())
        .collect::<Result<Vec<_>>>()?;
    let attention = graph
        .nodes
        .iter()
        .map(|n| match &n.op {
            Op::Attention { layer, sources } => {
                let a = graph.layers[*layer].spec.attn.expect("attention geometry");
                Some(sources.iter().map(|&s| attention_source_stats(&cap.values[s], a.heads, a.dim)).collect())
            }
            _ => None,
        })
        .collect();
    let reservoirs = cap
        .values
        .iter()
        .map(|t| {
            let stride = t.len().div_ceil(budget.max(1)).max(1);
            t.data().iter().step_by(stride).copied().collect()
        })
        .collect();
    Ok(CalibRecord { samples: 1, values, preact, attention, reservoirs })
}

/// Runs the float model on every sample (each `[1, C, H, W]`) and accumulates
/// running extrema. Results are identical for sequential and parallel execution.
pub fn calibrate(graph: &ModelGraph, samples: &[Tensor<f32>], exec: Exec) -> Result<CalibRecord> {
    if samples.is_empty() {
        return Err(Error::Calibration("calibration set is empty".into()));
    }
    let budget = RESERVOIR_CAP / samples.len();
    let parts = exec::map_slice(exec, samples, |x| {
        if x.shape().first() != Some(&1) {
            return Err(Error::Calibration(format!("calibration sample {:?} must have batch 1", x.shape())));
        }
        let (_, cap) = forward_float_capture(graph, x).map_err(|e| Error::Calibration(e.to_string()))?;
        record_one(graph, &cap, budget)
    });
    let mut it = parts.into_iter();
    let mut rec = it.next().expect("non-empty")?;
    for p in it {
        rec.merge(p?)?;
    }
    Ok(rec)
}

/// Standard-normal calibration images for a model input `(C, H, W)`.
pub fn synthetic_inputs(input: (usize, usize, usize), count: usize, seed: u64) -> Vec<Tensor<f32>> {
    let (c, h, w) = input;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64));
            let data = (0..c * h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
            Tensor::new(vec![1, c, h, w], data).expect("shape is consistent")
        })
        .collect()
}
