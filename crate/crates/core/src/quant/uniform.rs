use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Integer range `[lo, hi]` of a `bits`-wide signed or unsigned grid.
pub fn int_range(bits: u32, signed: bool) -> (i64, i64) {
    if signed {
        (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
    } else {
        (0, (1i64 << bits) - 1)
    }
}

/// Round-to-nearest-even of `x / scale`, clipped to the grid.
pub fn quantize_value(x: f64, scale: f64, bits: u32, signed: bool) -> i64 {
    let (lo, hi) = int_range(bits, signed);
    ((x / scale).round_ties_even() as i64).clamp(lo, hi)
}

fn check(scale: f32, bits: u32, max_bits: u32) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid(format!("scale must be positive and finite, got {scale}")));
    }
    if !(2..=max_bits).contains(&bits) {
        return Err(Error::invalid(format!("bit width {bits} outside [2, {max_bits}]")));
    }
    Ok(())
}

/// Uniform quantization onto a signed or unsigned grid of up to 16 bits.
pub fn quantize_uniform(x: &Tensor<f32>, scale: f32, bits: u32, signed: bool) -> Result<Tensor<i32>> {
    check(scale, bits, 16)?;
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quantize_uniform"));
    }
    Ok(x.map(|v| quantize_value(v as f64, scale as f64, bits, signed) as i32))
}

/// Signed 8-bit storage variant.
pub fn quantize_i8(x: &Tensor<f32>, scale: f32) -> Result<Tensor<i8>> {
    Ok(quantize_uniform(x, scale, 8, true)?.map(|v| v as i8))
}

pub fn dequantize(q: &Tensor<i32>, scale: f32) -> Tensor<f32> {
    q.map(|v| (v as f64 * scale as f64) as f32)
}

/// Mean squared error between `x` and its quantize-dequantize round trip with per-channel
/// scales (`scales.len()` is 1 or the channel count of the NCHW tensor).
pub fn fake_quant_mse(x: &Tensor<f32>, scales: &[f32], offsets: &[f32], bits: u32) -> Result<f64> {
    let (n, c, h, w) = x.dims4()?;
    if scales.len() != 1 && scales.len() != c {
        return Err(Error::shape(format!("{} scales for {c} channels", scales.len())));
    }
    if !offsets.is_empty() && offsets.len() != c {
        return Err(Error::shape(format!("{} offsets for {c} channels", offsets.len())));
    }
    let plane = h * w;
    let mut acc = 0f64;
    for (i, &v) in x.data().iter().enumerate() {
        let ch = (i / plane) % c;
        let s = scales[if scales.len() == 1 { 0 } else { ch }] as f64;
        let o = offsets.get(ch).copied().unwrap_or(0.0) as f64;
        let q = quantize_value(v as f64 - o, s, bits, true);
        let e = q as f64 * s + o - v as f64;
        acc += e * e;
    }
    Ok(acc / (n * c * plane) as f64)
}
