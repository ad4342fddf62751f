use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ChannelStats, Tensor};

/// How the per-channel shift offset is derived from channel extrema.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftRule {
    /// `(max + min) / 2`, which centres each channel on zero.
    #[default]
    Midpoint,
    /// `(max - min) / 2`, kept for comparison.
    HalfRange,
}

pub fn compute_filter_shift(stats: &ChannelStats) -> Result<Vec<f32>> {
    compute_filter_shift_with(stats, ShiftRule::Midpoint)
}

pub fn compute_filter_shift_with(stats: &ChannelStats, rule: ShiftRule) -> Result<Vec<f32>> {
    stats
        .per_channel_min
        .iter()
        .zip(&stats.per_channel_max)
        .map(|(&lo, &hi)| {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::NonFinite("shift statistics"));
            }
            let (lo, hi) = (lo as f64, hi as f64);
            Ok(match rule {
                ShiftRule::Midpoint => ((hi + lo) / 2.0) as f32,
                ShiftRule::HalfRange => ((hi - lo) / 2.0) as f32,
            })
        })
        .collect()
}

/// `b̂_j = b_j + Σ_i c_i·w_{j,i}` for a (possibly grouped) 1×1 convolution.
pub fn update_bias_for_shift(pw2_weights: &Tensor<f32>, bias: &[f32], c: &[f32]) -> Result<Vec<f32>> {
    let (o, cig, kh, kw) = pw2_weights.dims4()?;
    if kh != 1 || kw != 1 {
        return Err(Error::shape("bias update expects a 1x1 convolution"));
    }
    if cig == 0 || c.len() % cig != 0 || o % (c.len() / cig) != 0 {
        return Err(Error::shape(format!(
            "{} shift offsets do not match weights {:?}",
            c.len(),
            pw2_weights.shape()
        )));
    }
    if !bias.is_empty() && bias.len() != o {
        return Err(Error::shape(format!("{} biases for {o} filters", bias.len())));
    }
    let groups = c.len() / cig;
    let opg = o / groups;
    Ok((0..o)
        .map(|j| {
            let base = (j / opg) * cig;
            let acc: f64 = (0..cig)
                .map(|i| c[base + i] as f64 * pw2_weights.data()[j * cig + i] as f64)
                .sum();
            (acc + bias.get(j).copied().unwrap_or(0.0) as f64) as f32
        })
        .collect())
}
