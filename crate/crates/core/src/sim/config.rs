use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Hybrid accelerator geometry and clocking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    /// R-MACs per R-MAC lane.
    #[serde(rename = "N")]
    pub n: usize,
    /// R-MAC lanes per core.
    #[serde(rename = "M")]
    pub m: usize,
    /// Multipliers per MAT lane.
    #[serde(rename = "T")]
    pub t: usize,
    /// MAT lanes per core.
    #[serde(rename = "S")]
    pub s: usize,
    /// Cores.
    #[serde(rename = "L")]
    pub l: usize,
    pub clock_mhz: f64,
    /// Off-chip bandwidth; `None` is unbounded.
    #[serde(default, serialize_with = "ser_bw", deserialize_with = "de_bw")]
    pub dram_bytes_per_cycle: Option<f64>,
    /// 8-bit multiplications packed into one DSP.
    pub dsp_pack: usize,
    /// Stall per stride-2 depthwise row group while the odd/even streams are reordered.
    #[serde(default = "d_phase")]
    pub phase_switch_overhead: u64,
    /// Requantization and log2 stage depth, charged once per layer.
    #[serde(default = "d_requant")]
    pub requant_depth: u64,
    /// Cycles the shifter array needs after its last operand arrives.
    #[serde(default = "d_drain")]
    pub shift_drain: u64,
    /// Auxiliary adder-tree inputs per core; 0 means one MAT lane.
    #[serde(default)]
    pub adder_fanin: usize,
    /// Shifters per core; 0 means one MAT lane.
    #[serde(default)]
    pub shifters: usize,
}

fn d_phase() -> u64 {
    2
}
fn d_requant() -> u64 {
    4
}
fn d_drain() -> u64 {
    1
}

fn ser_bw<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("inf"),
    }
}

fn de_bw<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Bw {
        Num(f64),
        Text(String),
    }
    match Option::<Bw>::deserialize(d)? {
        None => Ok(None),
        Some(Bw::Num(x)) if x.is_infinite() => Ok(None),
        Some(Bw::Num(x)) => Ok(Some(x)),
        Some(Bw::Text(t)) if matches!(t.to_ascii_lowercase().as_str(), "inf" | "infinity" | "unbounded") => Ok(None),
        Some(Bw::Text(t)) => Err(serde::de::Error::custom(format!("invalid bandwidth `{t}`"))),
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            n: 8,
            m: 8,
            t: 8,
            s: 8,
            l: 16,
            clock_mhz: 200.0,
            dram_bytes_per_cycle: None,
            dsp_pack: 2,
            phase_switch_overhead: d_phase(),
            requant_depth: d_requant(),
            shift_drain: d_drain(),
            adder_fanin: 0,
            shifters: 0,
        }
    }
}

impl EngineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: EngineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.n, self.m, self.t, self.s, self.l, self.dsp_pack].contains(&0) {
            return Err(Error::Config("engine dimensions and dsp_pack must be positive".into()));
        }
        if !(self.clock_mhz.is_finite() && self.clock_mhz > 0.0) {
            return Err(Error::Config(format!("clock_mhz {} must be positive", self.clock_mhz)));
        }
        if let Some(bw) = self.dram_bytes_per_cycle {
            if !(bw > 0.0) {
                return Err(Error::Config(format!("dram_bytes_per_cycle {bw} must be positive")));
            }
        }
        Ok(())
    }

    /// Sets one field from a `key=value` override such as `L=32`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid value `{value}` for `{key}`"));
        let int = || value.parse::<usize>().map_err(|_| bad());
        match key {
            "N" | "n" => self.n = int()?,
            "M" | "m" => self.m = int()?,
            "T" | "t" => self.t = int()?,
            "S" | "s" => self.s = int()?,
            "L" | "l" => self.l = int()?,
            "dsp_pack" => self.dsp_pack = int()?,
            "adder_fanin" => self.adder_fanin = int()?,
            "shifters" => self.shifters = int()?,
            "phase_switch_overhead" => self.phase_switch_overhead = int()? as u64,
            "requant_depth" => self.requant_depth = int()? as u64,
            "shift_drain" => self.shift_drain = int()? as u64,
            "clock_mhz" => self.clock_mhz = value.parse().map_err(|_| bad())?,
            "dram_bytes_per_cycle" => {
                self.dram_bytes_per_cycle = match value {
                    "inf" | "infinity" => None,
                    v => Some(v.parse().map_err(|_| bad())?),
                }
            }
            _ => return Err(Error::Config(format!("unknown engine parameter `{key}`"))),
        }
        self.validate()
    }

    pub fn mat_multipliers(&self) -> usize {
        self.t * self.s * self.l
    }

    pub fn rmac_multipliers(&self) -> usize {
        self.n * self.m * self.l
    }

    pub fn total_multipliers(&self) -> usize {
        (self.n * self.m + self.t * self.s) * self.l
    }

    pub fn peak_gops(&self) -> f64 {
        self.total_multipliers() as f64 * 2.0 * self.clock_mhz * 1e6 / 1e9
    }

    pub fn dsp_count(&self) -> usize {
        self.total_multipliers().div_ceil(self.dsp_pack)
    }

    pub fn fanin(&self) -> usize {
        if self.adder_fanin == 0 { self.t } else { self.adder_fanin }
    }

    pub fn shifter_count(&self) -> usize {
        if self.shifters == 0 { self.t } else { self.shifters }
    }
}
