use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rescale factor `b / 2^c` applied as an integer multiply and a rounding shift.
/// `c` is negative only for factors too large for `max_bits` numerators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dyadic {
    pub b: i64,
    pub c: i32,
}

impl Dyadic {
    pub fn value(self) -> f64 {
        self.b as f64 * (-self.c as f64).exp2()
    }
}

/// Largest shift the integer kernels support.
pub const MAX_SHIFT: i32 = 62;

/// `b = round(s·2^c)` with the largest `c` keeping `b < 2^max_bits`.
pub fn dyadic_approx(s: f64, max_bits: u32) -> Result<Dyadic> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::invalid(format!("dyadic scale must be positive and finite, got {s}")));
    }
    if !(2..=31).contains(&max_bits) {
        return Err(Error::invalid(format!("numerator width {max_bits} outside [2, 31]")));
    }
    let limit = (1u64 << max_bits) as f64;
    // Start from the exponent that puts s·2^c in [2^(max_bits-1), 2^max_bits).
    let mut c = max_bits as i32 - 1 - s.log2().floor() as i32;
    loop {
        let b = (s * (c as f64).exp2()).round_ties_even();
        if b >= limit {
            c -= 1;
        } else if (s * ((c + 1) as f64).exp2()).round_ties_even() < limit {
            c += 1;
        } else {
            if c > MAX_SHIFT {
                return Err(Error::invalid(format!("scale {s} needs a shift beyond {MAX_SHIFT}")));
            }
            if b < 1.0 {
                return Err(Error::invalid(format!("scale {s} underflows the dyadic grid")));
            }
            return Ok(Dyadic { b: b as i64, c });
        }
    }
}
