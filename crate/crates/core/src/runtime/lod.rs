use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rounding rule turning a positive integer into a power-of-two exponent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Log2Rounding {
    /// Leading one plus the bit just below it.
    LeadingOneBit,
    /// Nearest exponent in the log domain: rounds up iff `x² ≥ 2^(2i+1)`.
    #[default]
    Nearest,
}

/// Index of the most significant set bit, i.e. `floor(log2(x))`.
pub fn lod(x: i64) -> Result<u32> {
    if x <= 0 {
        return Err(Error::invalid(format!("leading-one detection needs x >= 1, got {x}")));
    }
    Ok(63 - x.leading_zeros())
}

/// `lod(x)` plus bit `lod(x) - 1` of `x`.
pub fn log2_round(x: i64) -> Result<u32> {
    let i = lod(x)?;
    Ok(if i == 0 { 0 } else { i + ((x >> (i - 1)) & 1) as u32 })
}

/// Exponent nearest to `log2(x)`, computed with integer operations only.
pub fn log2_round_nearest(x: i64) -> Result<u32> {
    let i = lod(x)?;
    let sq = (x as u128) * (x as u128);
    Ok(if sq >= 1u128 << (2 * i + 1) { i + 1 } else { i })
}

pub fn log2_round_with(x: i64, mode: Log2Rounding) -> Result<u32> {
    match mode {
        Log2Rounding::LeadingOneBit => log2_round(x),
        Log2Rounding::Nearest => log2_round_nearest(x),
    }
}

/// Exponents of a log2-quantized divisor tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Log2Divisor {
    pub exponents: Tensor<i32>,
    pub e_s: i32,
    pub clip: (i32, i32),
    pub zero_count: u64,
    pub clipped_count: u64,
}

pub const DEFAULT_LOG2_WINDOW: (i32, i32) = (-8, 7);

/// Exponent for one divisor: `clamp(e_s + round_log2(x), lo, hi)`, zero maps to `lo`.
/// Returns the exponent and whether it was clamped (`None` flags a zero divisor).
pub fn divisor_exponent(x: i64, e_s: i32, clip: (i32, i32), mode: Log2Rounding) -> (i32, Option<bool>) {
    if x <= 0 {
        return (clip.0, None);
    }
    let e = e_s + log2_round_with(x, mode).expect("x >= 1") as i32;
    let c = e.clamp(clip.0, clip.1);
    (c, Some(c != e))
}

pub fn quantize_divisor_log2(div: &Tensor<i32>, e_s: i32, clip: (i32, i32)) -> Result<Log2Divisor> {
    quantize_divisor_log2_with(div, e_s, clip, Log2Rounding::LeadingOneBit)
}

pub fn quantize_divisor_log2_with(
    div: &Tensor<i32>,
    e_s: i32,
    clip: (i32, i32),
    mode: Log2Rounding,
) -> Result<Log2Divisor> {
    if clip.0 > clip.1 {
        return Err(Error::invalid(format!("empty exponent window {clip:?}")));
    }
    if div.data().iter().any(|&x| x < 0) {
        return Err(Error::invalid("divisors must be non-negative"));
    }
    let (mut zero_count, mut clipped_count) = (0, 0);
    let exponents = div.map(|x| {
        let (e, flag) = divisor_exponent(x as i64, e_s, clip, mode);
        match flag {
            None => zero_count += 1,
            Some(true) => clipped_count += 1,
            Some(false) => {}
        }
        e
    });
    Ok(Log2Divisor { exponents, e_s, clip, zero_count, clipped_count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        assert_eq!(lod(1).unwrap(), 0);
        assert_eq!(lod(0b0110_0011).unwrap(), 6);
        assert_eq!(log2_round(0b0110_0011).unwrap(), 7);
        assert_eq!(log2_round(4).unwrap(), 2);
        assert_eq!(log2_round(1).unwrap(), 0);
        assert!(lod(0).is_err() && log2_round(-3).is_err());
    }

    #[test]
    fn divisor_examples() {
        let d = Tensor::new(vec![3], vec![99, 0, 1]).unwrap();
        let q = quantize_divisor_log2(&d, 0, DEFAULT_LOG2_WINDOW).unwrap();
        assert_eq!(q.exponents.data(), &[7, -8, 0]);
        assert_eq!(q.zero_count, 1);
        let q = quantize_divisor_log2(&Tensor::new(vec![1], vec![99]).unwrap(), 3, (-8, 7)).unwrap();
        assert_eq!(q.exponents.data(), &[7]);
        assert_eq!(q.clipped_count, 1);
    }

    #[test]
    fn bit_rule_midpoints() {
        // 3 sits at 1.5·2^1 and rounds up under the bit rule although log2(3) < 1.5
        assert_eq!(log2_round(3).unwrap(), 2);
        assert_eq!(log2_round_nearest(3).unwrap(), 2);
        // 23 = 1.4375·2^4: bit rule keeps 4, nearest-in-log rounds up
        assert_eq!(log2_round(23).unwrap(), 4);
        assert_eq!(log2_round_nearest(23).unwrap(), 5);
    }

    #[test]
    fn exhaustive_small_range() {
        for x in 1i64..=1 << 16 {
            let l = (x as f64).log2();
            let f = lod(x).unwrap();
            assert_eq!(f, l.floor() as u32);
            let r = log2_round(x).unwrap() as f64;
            assert!(r == l.floor() || r == l.ceil());
            let frac = x as f64 / (f as f64).exp2();
            assert_eq!(r as u32, if frac >= 1.5 { f + 1 } else { f });
            let n = log2_round_nearest(x).unwrap() as f64;
            assert!((n - l).abs() <= 0.5 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn lod_law(x in 1i64..=1 << 30) {
            prop_assert_eq!(lod(x).unwrap(), (x as f64).log2().floor() as u32);
        }
    }
}
