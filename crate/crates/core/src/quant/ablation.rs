use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::DivisorMode;
use super::migration::compute_migration_factors;
use super::shift::compute_filter_shift;
use super::uniform::fake_quant_mse;
use crate::error::Result;
use crate::runtime::{divisor_exponent, Log2Rounding};
use crate::tensor::{channel_stats, synth_asymmetry, synth_variation, ChannelStats, Tensor};

/// Reconstruction quality of attention divisors under one quantization mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisorStress {
    pub mode: DivisorMode,
    pub samples: usize,
    /// Mean of |x̂ − x| / x; a divisor quantized to zero counts as error 1.
    pub mean_rel_error: f64,
    /// Divisors that collapse to zero and would divide by zero.
    pub zero_divisors: usize,
    pub clipped: usize,
}

pub const STRESS_RANGE: (f64, f64) = (0.01, 1500.0);

/// Log-uniform divisors over five decades, the spread a linear-attention
/// denominator shows across tokens.
pub fn divisor_stress(mode: DivisorMode, log2_bits: u32, samples: usize, seed: u64) -> DivisorStress {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = STRESS_RANGE;
    let xs: Vec<f64> = (0..samples).map(|_| rng.random_range(lo.ln()..hi.ln()).exp()).collect();
    let grid = hi / f64::from(1u32 << 20);
    let (mut err, mut zeros, mut clipped) = (0.0, 0, 0);
    for &x in &xs {
        let q = (x / grid).round() as i64;
        let rec = match mode {
            DivisorMode::Uniform8 => {
                let s8 = hi / 255.0;
                let x8 = (x / s8).round().clamp(0.0, 255.0);
                x8 * s8
            }
            DivisorMode::Log2 => {
                let e_max = (hi / grid).log2().ceil() as i32;
                let window = (e_max - ((1 << log2_bits) - 1), e_max);
                let (e, c) = divisor_exponent(q, 0, window, Log2Rounding::Nearest);
                if c == Some(true) {
                    clipped += 1;
                }
                (e as f64).exp2() * grid
            }
        };
        if rec == 0.0 {
            zeros += 1;
            err += 1.0;
        } else {
            err += (rec - x).abs() / x;
        }
    }
    DivisorStress { mode, samples, mean_rel_error: err / samples.max(1) as f64, zero_divisors: zeros, clipped }
}

/// Outcome of `trials` paired MSE comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub trials: usize,
    /// Trials where the technique gave strictly lower MSE.
    pub wins: usize,
    pub mean_mse_with: f64,
    pub mean_mse_without: f64,
}

impl Ablation {
    pub fn win_rate(&self) -> f64 {
        self.wins as f64 / self.trials.max(1) as f64
    }
}

fn layer_scale(st: &ChannelStats) -> f32 {
    st.layer_max.abs().max(st.layer_min.abs()).max(f32::MIN_POSITIVE) / 127.0
}

/// 8-bit MSE without and with channel-wise migration.
pub fn migration_mse(x: &Tensor<f32>) -> Result<(f64, f64)> {
    let st = channel_stats(x)?;
    let plain = fake_quant_mse(x, &[layer_scale(&st)], &[], 8)?;
    let m = compute_migration_factors(&st)?;
    let amax = (0..st.channels())
        .map(|c| st.per_channel_max[c].abs().max(st.per_channel_min[c].abs()) / m[c])
        .fold(0f32, f32::max);
    let scales: Vec<f32> = m.iter().map(|&mi| amax / 127.0 * mi).collect();
    Ok((plain, fake_quant_mse(x, &scales, &[], 8)?))
}

/// 8-bit MSE without and with filter-wise shifting.
pub fn shifting_mse(x: &Tensor<f32>) -> Result<(f64, f64)> {
    let st = channel_stats(x)?;
    let plain = fake_quant_mse(x, &[layer_scale(&st)], &[], 8)?;
    let c = compute_filter_shift(&st)?;
    let half = (0..st.channels())
        .map(|k| (st.per_channel_max[k] - c[k]).abs().max((st.per_channel_min[k] - c[k]).abs()))
        .fold(0f32, f32::max);
    Ok((plain, fake_quant_mse(x, &[half.max(f32::MIN_POSITIVE) / 127.0], &c, 8)?))
}

fn run(trials: usize, mut f: impl FnMut(u64) -> Result<(f64, f64)>) -> Result<Ablation> {
    let (mut wins, mut with, mut without) = (0, 0.0, 0.0);
    for t in 0..trials {
        let (plain, fixed) = f(t as u64)?;
        if fixed < plain {
            wins += 1;
        }
        with += fixed;
        without += plain;
    }
    let n = trials.max(1) as f64;
    Ok(Ablation { trials, wins, mean_mse_with: with / n, mean_mse_without: without / n })
}

/// Migration on `synth_variation` tensors (32 channels, 8×8).
pub fn migration_ablation(trials: usize, scale_span: f32, seed: u64) -> Result<Ablation> {
    run(trials, |t| migration_mse(&synth_variation(32, 8, scale_span, seed.wrapping_add(t))?))
}

/// Shifting on `synth_asymmetry` tensors (32 channels, 8×8).
pub fn shifting_ablation(trials: usize, offset_span: f32, seed: u64) -> Result<Ablation> {
    run(trials, |t| shifting_mse(&synth_asymmetry(32, 8, offset_span, seed.wrapping_add(t))?))
}
