use super::lod::{divisor_exponent, Log2Rounding};
use super::requant::{clip, requant_value, rescale, rne_div, rne_shift};
use crate::diag::Diagnostics;
use crate::error::{Error, Result};
use crate::quant::{AttnSourceQuant, DivisorMode, Dyadic};
use crate::tensor::Tensor;

/// Integer intermediates of one head, exposed for auditing the five steps.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrace {
    /// Step i: requantized `ReLU(K)ᵀV`, `[d, d]`.
    pub kv: Vec<i64>,
    /// Step ii: `Σ ReLU(K)`, exact.
    pub ksum: Vec<i64>,
    /// Step iii: 16-bit dividends, `[tokens, d]`.
    pub dividend: Vec<i64>,
    /// Step iv: divisors, `[tokens]`.
    pub divisor: Vec<i64>,
}

/// Step v for one element: divide a 16-bit dividend by the quantized divisor.
pub(crate) fn divide(
    d16: i64,
    x: i64,
    p: &AttnSourceQuant,
    mode: DivisorMode,
    rounding: Log2Rounding,
    diag: &mut Diagnostics,
) -> i64 {
    match mode {
        DivisorMode::Log2 => {
            let (e, flag) = divisor_exponent(x, p.e_s, p.window, rounding);
            match flag {
                None => diag.zero_divisors += 1,
                Some(true) => diag.clipped_exponents += 1,
                Some(false) => {}
            }
            clip(rne_shift(d16 as i128 * p.out_log2.b as i128, p.out_log2.c + e), 8, true)
        }
        DivisorMode::Uniform8 => {
            let x8 = clip(rescale(x, p.rq_x8), 8, false);
            if x8 == 0 {
                diag.saturated_divisors += 1;
                return clip((d16.signum() as i128) * 128, 8, true);
            }
            let Dyadic { b, c } = p.out_u8;
            let num = d16 as i128 * b as i128;
            let (num, den) = if c >= 0 { (num, (x8 as i128) << c) } else { (num << -c, x8 as i128) };
            clip(rne_div(num, den), 8, true)
        }
    }
}

/// One head on token-major `[tokens, d]` operands. Returns i8 outputs and the trace.
pub(crate) fn attend_int(
    q: &[i8],
    k: &[i8],
    v: &[i8],
    tokens: usize,
    d: usize,
    p: &AttnSourceQuant,
    mode: DivisorMode,
    rounding: Log2Rounding,
    diag: &mut Diagnostics,
) -> (Vec<i8>, HeadTrace) {
    let relu = |x: i8| (x as i64).max(0);
    let mut kv_acc = vec![0i64; d * d];
    let mut ksum = vec![0i64; d];
    for t in 0..tokens {
        for i in 0..d {
            let ki = relu(k[t * d + i]);
            ksum[i] += ki;
            for j in 0..d {
                kv_acc[i * d + j] += ki * v[t * d + j] as i64;
            }
        }
    }
    let kv: Vec<i64> = kv_acc.iter().map(|&a| requant_value(a, p.rq_kv, 8, true)).collect();
    let mut out = vec![0i8; tokens * d];
    let mut dividend = vec![0i64; tokens * d];
    let mut divisor = vec![0i64; tokens];
    for t in 0..tokens {
        let mut x = 0i64;
        let mut dacc = vec![0i64; d];
        for i in 0..d {
            let qi = relu(q[t * d + i]);
            x += qi * ksum[i];
            for j in 0..d {
                dacc[j] += qi * kv[i * d + j];
            }
        }
        divisor[t] = x;
        for j in 0..d {
            let d16 = requant_value(dacc[j], p.rq_d, 16, true);
            dividend[t * d + j] = d16;
            out[t * d + j] = divide(d16, x, p, mode, rounding, diag) as i8;
        }
    }
    (out, HeadTrace { kv, ksum, dividend, divisor })
}

/// Integer ReLU linear attention for one head with shift-based division.
pub fn attention_int(
    q: &Tensor<i8>,
    k: &Tensor<i8>,
    v: &Tensor<i8>,
    params: &AttnSourceQuant,
    mode: DivisorMode,
    rounding: Log2Rounding,
    diag: &mut Diagnostics,
) -> Result<Tensor<i8>> {
    let [t, d] = *q.shape() else {
        return Err(Error::shape(format!("Q must be [tokens, d], got {:?}", q.shape())));
    };
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::shape("Q, K and V must share one shape"));
    }
    let (out, _) = attend_int(q.data(), k.data(), v.data(), t, d, params, mode, rounding, diag);
    Tensor::new(vec![t, d], out)
}
