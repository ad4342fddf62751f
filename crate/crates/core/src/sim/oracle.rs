//! Register-level, cycle-stepped models of the two engines. They move real
//! operands through lanes, shift registers and adder-tree stages, so a run
//! yields both the cycle count and the layer output.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::EngineConfig;
use super::cost::{ceil_log2, is_dense, reduction};
use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventResult {
    pub cycles: u64,
    /// Useful multiply-accumulates (padding and idle lanes excluded).
    pub macs: u64,
    /// `[C_out, H_out, W_out]` accumulators.
    pub output: Vec<i64>,
}

/// Deterministic small-integer operands: input `[C_in, H, W]`, weights `[C_out, C_in/groups, k, k]`.
pub fn event_operands(spec: &LayerSpec, seed: u64) -> (Vec<i64>, Vec<i64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = spec.spatial_in;
    let x = (0..spec.in_channels * h * w).map(|_| rng.random_range(-8..=8)).collect();
    let wt = (0..spec.out_channels * reduction(spec)).map(|_| rng.random_range(-8..=8)).collect();
    (x, wt)
}

fn pixel_at(x: &[i64], spec: &LayerSpec, c: usize, iy: isize, ix: isize) -> i64 {
    let (h, w) = spec.spatial_in;
    if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
        return 0;
    }
    x[(c * h + iy as usize) * w + ix as usize]
}

/// Dense layer on `lanes` lanes of `width` multipliers feeding a pipelined reduction of depth ⌈log2 width⌉.
fn event_dense(spec: &LayerSpec, lanes: usize, width: usize, x: &[i64], wt: &[i64]) -> EventResult {
    let (ho, wo) = spec.spatial_out;
    let (k, st, pad) = (spec.kernel, spec.stride, spec.padding() as isize);
    let red = reduction(spec);
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let depth = ceil_log2(width) as usize;
    let mut out = vec![0i64; spec.out_channels * ho * wo];
    let mut pipe: VecDeque<Option<Vec<(usize, i64)>>> = VecDeque::new();
    let groups = spec.out_channels.div_ceil(lanes);
    let chunks = red.div_ceil(width);
    let total = ho * wo * groups * chunks;
    let (mut issued, mut cycles, mut macs) = (0usize, 0u64, 0u64);
    loop {
        cycles += 1;
        let slot = (issued < total).then(|| {
            let (p, rest) = (issued / (groups * chunks), issued % (groups * chunks));
            let (g, j) = (rest / chunks, rest % chunks);
            let (oy, ox) = (p / wo, p % wo);
            let mut sums = Vec::with_capacity(lanes);
            for lane in 0..lanes {
                let oc = g * lanes + lane;
                if oc >= spec.out_channels {
                    continue;
                }
                let mut s = 0i64;
                for t in 0..width {
                    let r = j * width + t;
                    if r >= red {
                        break;
                    }
                    let (ci, ky, kx) = (r / (k * k), (r / k) % k, r % k);
                    let c = (oc / cout_g) * cin_g + ci;
                    let iy = (oy * st + ky) as isize - pad;
                    let ix = (ox * st + kx) as isize - pad;
                    s += wt[oc * red + r] * pixel_at(x, spec, c, iy, ix);
                    macs += 1;
                }
                sums.push(((oc * ho + oy) * wo + ox, s));
            }
            issued += 1;
            sums
        });
        pipe.push_back(slot);
        if pipe.len() > depth {
            if let Some(Some(sums)) = pipe.pop_front() {
                for (i, s) in sums {
                    out[i] += s;
                }
            }
        }
        if issued == total && pipe.iter().all(Option::is_none) {
            break;
        }
    }
    EventResult { cycles, macs, output: out }
}

/// Event model of the MAT engine (one core, whole layer).
pub fn event_mat(spec: &LayerSpec, cfg: &EngineConfig, x: &[i64], wt: &[i64]) -> Result<EventResult> {
    if !is_dense(spec) {
        return Err(Error::Unroutable { layer: spec.name.clone(), kind: spec.kind.name().into() });
    }
    Ok(event_dense(spec, cfg.s, cfg.t, x, wt))
}

/// Event model of the R-MAC engine in down-forward mode (one core, whole layer).
pub fn event_rmac_dense(spec: &LayerSpec, cfg: &EngineConfig, x: &[i64], wt: &[i64]) -> Result<EventResult> {
    if !is_dense(spec) {
        return Err(Error::Unroutable { layer: spec.name.clone(), kind: spec.kind.name().into() });
    }
    Ok(event_dense(spec, cfg.m, cfg.n, x, wt))
}

/// Event model of the R-MAC engine in self-accumulation mode. Each R-MAC row
/// owns a channel, each lane an output column; a kernel row takes K cycles
/// while the input window shifts one lane per cycle. Stride 2 splits the
/// input into odd and even column streams, taps on odd columns first.
pub fn event_rmac_dw(spec: &LayerSpec, cfg: &EngineConfig, x: &[i64], wt: &[i64]) -> Result<EventResult> {
    if spec.kind != LayerKind::DWConv || ![3, 5].contains(&spec.kernel) || ![1, 2].contains(&spec.stride) {
        return Err(Error::Unroutable { layer: spec.name.clone(), kind: spec.kind.name().into() });
    }
    let (ho, wo) = spec.spatial_out;
    let (k, st, pad) = (spec.kernel, spec.stride, spec.padding() as isize);
    let (n, m) = (cfg.n, cfg.m);
    let c_total = spec.out_channels;
    let taps: Vec<usize> = if st == 1 {
        (0..k).collect()
    } else {
        (1..k).step_by(2).chain((0..k).step_by(2)).collect()
    };
    let mut out = vec![0i64; c_total * ho * wo];
    let (mut cycles, mut macs) = (0u64, 0u64);
    let mut reg = vec![0i64; n * m];
    let mut acc = vec![0i64; n * m];
    for oy in 0..ho {
        for cg in 0..c_total.div_ceil(n) {
            for wg in 0..wo.div_ceil(m) {
                acc.iter_mut().for_each(|a| *a = 0);
                if st == 2 {
                    cycles += cfg.phase_switch_overhead;
                }
                for ky in 0..k {
                    let iy = (oy * st + ky) as isize - pad;
                    let mut prev_kx: Option<usize> = None;
                    for &kx in &taps {
                        cycles += 1;
                        let col = |lane: usize| ((wg * m + lane) * st + kx) as isize - pad;
                        for r in 0..n {
                            let c = cg * n + r;
                            for lane in 0..m {
                                let idx = r * m + lane;
                                let fresh = match prev_kx {
                                    // same stream: shift the window by one lane, lane+1 still holds its old value
                                    Some(p) if kx == p + st && lane + 1 < m => None,
                                    _ => Some(lane),
                                };
                                reg[idx] = match fresh {
                                    None => reg[idx + 1],
                                    Some(l) if c < c_total => pixel_at(x, spec, c, iy, col(l)),
                                    Some(_) => 0,
                                };
                            }
                        }
                        for r in 0..n {
                            let c = cg * n + r;
                            if c >= c_total {
                                continue;
                            }
                            let wv = wt[(c * k + ky) * k + kx];
                            for lane in 0..m {
                                if wg * m + lane < wo {
                                    acc[r * m + lane] += wv * reg[r * m + lane];
                                    macs += 1;
                                }
                            }
                        }
                        prev_kx = Some(kx);
                    }
                }
                for r in 0..n {
                    let c = cg * n + r;
                    for lane in 0..m {
                        let ox = wg * m + lane;
                        if c < c_total && ox < wo {
                            out[(c * ho + oy) * wo + ox] = acc[r * m + lane];
                        }
                    }
                }
            }
        }
    }
    Ok(EventResult { cycles, macs, output: out })
}
