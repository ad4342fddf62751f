use crate::error::{Error, Result};
use crate::quant::{int_range, Dyadic};
use crate::tensor::Tensor;

/// `v / 2^shift` rounded half-to-even; a negative shift multiplies instead.
pub fn rne_shift(v: i128, shift: i32) -> i128 {
    if shift <= 0 {
        return v << (-shift).min(100);
    }
    let q = v >> shift;
    let r = v - (q << shift);
    let half = 1i128 << (shift - 1);
    if r > half || (r == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// `round(num / den)` with ties to even; `den > 0`.
pub fn rne_div(num: i128, den: i128) -> i128 {
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    if 2 * r > den || (2 * r == den && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

pub fn clip(v: i128, bits: u32, signed: bool) -> i64 {
    let (lo, hi) = int_range(bits, signed);
    v.clamp(lo as i128, hi as i128) as i64
}

/// Unclipped `round(acc · b / 2^c)`.
#[inline]
pub fn rescale(acc: i64, d: Dyadic) -> i128 {
    rne_shift(acc as i128 * d.b as i128, d.c)
}

/// Clipped dyadic rescale of one accumulator.
#[inline]
pub fn requant_value(acc: i64, d: Dyadic, bits: u32, signed: bool) -> i64 {
    clip(rescale(acc, d), bits, signed)
}

fn check_dyadic(d: Dyadic) -> Result<()> {
    if !(0..1 << 16).contains(&d.b) {
        return Err(Error::invalid(format!("dyadic numerator {} outside [0, 2^16)", d.b)));
    }
    Ok(())
}

/// Requantizes accumulators to an `out_bits` grid (up to 8 bits).
pub fn requantize(acc: &Tensor<i32>, d: Dyadic, out_bits: u32, signed: bool) -> Result<Tensor<i8>> {
    check_dyadic(d)?;
    if !(2..=8).contains(&out_bits) || (!signed && out_bits > 7) {
        return Err(Error::invalid(format!("cannot store {out_bits}-bit output in i8")));
    }
    Ok(acc.map(|a| requant_value(a as i64, d, out_bits, signed) as i8))
}

/// Requantizes accumulators to a grid of up to 31 bits held in i32.
pub fn requantize_wide(acc: &Tensor<i32>, d: Dyadic, out_bits: u32, signed: bool) -> Result<Tensor<i32>> {
    check_dyadic(d)?;
    if !(2..=31).contains(&out_bits) {
        return Err(Error::invalid(format!("output width {out_bits} outside [2, 31]")));
    }
    Ok(acc.map(|a| requant_value(a as i64, d, out_bits, signed) as i32))
}
