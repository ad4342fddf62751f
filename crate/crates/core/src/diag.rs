use serde::{Deserialize, Serialize};

/// Counters for guarded numeric corner cases hit during a forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Float attention rows whose denominator fell to the epsilon guard.
    pub guarded_rows: u64,
    /// Integer divisors equal to zero (mapped to the lowest exponent).
    pub zero_divisors: u64,
    /// Divisor exponents clamped to the configured window.
    pub clipped_exponents: u64,
    /// Uniform 8-bit divisors that rounded to zero.
    pub saturated_divisors: u64,
}

impl Diagnostics {
    pub fn merge(&mut self, o: &Diagnostics) {
        self.guarded_rows += o.guarded_rows;
        self.zero_divisors += o.zero_divisors;
        self.clipped_exponents += o.clipped_exponents;
        self.saturated_divisors += o.saturated_divisors;
    }
}
