use super::uniform::quantize_value;
use crate::error::{Error, Result};

/// Percentiles tried by [`scale_search`]: 99.0, 99.1, ..., 100.0.
pub fn percentile_grid() -> Vec<f64> {
    (0..=10).map(|i| 99.0 + i as f64 / 10.0).collect()
}

/// Value at percentile `p` of sorted `xs` (nearest-rank).
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn quant_mse(xs: &[f32], scale: f64, bits: u32, signed: bool) -> f64 {
    xs.iter()
        .map(|&x| {
            let e = quantize_value(x as f64, scale, bits, signed) as f64 * scale - x as f64;
            e * e
        })
        .sum::<f64>()
        / xs.len() as f64
}

/// Picks the activation scale among percentile-clipped candidates that minimises the
/// dequantization MSE on `xs`; ties go to the larger scale.
pub fn scale_search(xs: &[f32], bits: u32, signed: bool) -> Result<f32> {
    if xs.is_empty() {
        return Err(Error::invalid("scale search needs at least one sample"));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scale_search"));
    }
    let qmax = if signed { (1u64 << (bits - 1)) - 1 } else { (1u64 << bits) - 1 } as f64;
    let mut mags: Vec<f64> = xs
        .iter()
        .map(|&x| if signed { (x as f64).abs() } else { (x as f64).max(0.0) })
        .collect();
    mags.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    for p in percentile_grid() {
        let bound = percentile(&mags, p);
        if bound <= 0.0 {
            continue;
        }
        let s = bound / qmax;
        let mse = quant_mse(xs, s, bits, signed);
        best = match best {
            Some((bm, bs)) if mse > bm || (mse == bm && s <= bs) => Some((bm, bs)),
            _ => Some((mse, s)),
        };
    }
    Ok(best.map_or(1.0 / qmax, |(_, s)| s) as f32)
}
