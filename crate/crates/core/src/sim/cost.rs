use super::config::EngineConfig;
use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec};

pub(crate) fn ceil_log2(x: usize) -> u64 {
    if x <= 1 { 0 } else { (usize::BITS - (x - 1).leading_zeros()) as u64 }
}

pub(crate) fn is_dense(spec: &LayerSpec) -> bool {
    matches!(spec.kind, LayerKind::GenericConv | LayerKind::PWConv | LayerKind::MatMul) && spec.attn.is_none()
}

fn unroutable(spec: &LayerSpec, why: &str) -> Error {
    Error::Unroutable { layer: spec.name.clone(), kind: format!("{} ({why})", spec.kind.name()) }
}

/// Reduction length of one output element.
pub(crate) fn reduction(spec: &LayerSpec) -> usize {
    spec.in_channels / spec.groups * spec.kernel * spec.kernel
}

/// Work split of a dense layer: units are (output pixel, group of `lanes` output channels).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseWork {
    pub units: u64,
    /// Cycles per unit on the MAT engine.
    pub mat: u64,
    /// Cycles per unit on the R-MAC engine in down-forward mode.
    pub rmac: u64,
}

impl DenseWork {
    pub fn of(spec: &LayerSpec, cfg: &EngineConfig) -> Result<Self> {
        if !is_dense(spec) {
            return Err(unroutable(spec, "not a dense layer"));
        }
        Ok(Self::raw(spec.pixels_out(), spec.out_channels, reduction(spec), cfg))
    }

    pub(crate) fn raw(pixels: usize, cout: usize, red: usize, cfg: &EngineConfig) -> Self {
        DenseWork {
            units: (pixels * cout.div_ceil(cfg.s)) as u64,
            mat: red.div_ceil(cfg.t) as u64,
            rmac: (red.div_ceil(cfg.n) * cfg.s.div_ceil(cfg.m)) as u64,
        }
    }

    pub fn scaled(self, units: u64) -> Self {
        DenseWork { units, ..self }
    }

    /// Cycles with all cores on the MAT engine only.
    pub fn mat_only(&self, cfg: &EngineConfig) -> u64 {
        self.units.div_ceil(cfg.l as u64) * self.mat
    }

    pub fn rmac_only(&self, cfg: &EngineConfig) -> u64 {
        self.units.div_ceil(cfg.l as u64) * self.rmac
    }

    /// Units per core given to the MAT engine when both engines start at the given times.
    pub fn split(&self, cfg: &EngineConfig, mat_free: u64, rmac_free: u64) -> (u64, u64) {
        let u = self.units.div_ceil(cfg.l as u64);
        let finish = |x: u64| (mat_free + x * self.mat).max(rmac_free + (u - x) * self.rmac);
        let guess = ((u * self.rmac + rmac_free).saturating_sub(mat_free) / (self.mat + self.rmac)).min(u);
        let mut best = (finish(guess), guess);
        for x in [guess.saturating_sub(1), guess + 1, 0, u] {
            if x <= u && finish(x) < best.0 {
                best = (finish(x), x);
            }
        }
        (best.1, u - best.1)
    }

    /// Cycles with both engines sharing the work from time zero.
    pub fn joint(&self, cfg: &EngineConfig) -> u64 {
        let (x, y) = self.split(cfg, 0, 0);
        (x * self.mat).max(y * self.rmac)
    }
}

/// Work split of a depthwise layer: units are (output row, group of N channels, group of M columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DwWork {
    pub rows: usize,
    pub units_per_row: u64,
    pub unit: u64,
}

impl DwWork {
    pub fn of(spec: &LayerSpec, cfg: &EngineConfig) -> Result<Self> {
        if spec.kind != LayerKind::DWConv {
            return Err(unroutable(spec, "self-accumulation mode only serves depthwise layers"));
        }
        if ![3, 5].contains(&spec.kernel) || ![1, 2].contains(&spec.stride) {
            return Err(unroutable(spec, "unsupported depthwise kernel or stride"));
        }
        let (h, w) = spec.spatial_out;
        let k2 = (spec.kernel * spec.kernel) as u64;
        let extra = if spec.stride == 2 { cfg.phase_switch_overhead } else { 0 };
        Ok(DwWork {
            rows: h,
            units_per_row: (spec.out_channels.div_ceil(cfg.n) * w.div_ceil(cfg.m)) as u64,
            unit: k2 + extra,
        })
    }

    pub fn row(&self, cfg: &EngineConfig) -> u64 {
        self.units_per_row.div_ceil(cfg.l as u64) * self.unit
    }

    pub fn whole(&self, cfg: &EngineConfig) -> u64 {
        (self.units_per_row * self.rows as u64).div_ceil(cfg.l as u64) * self.unit
    }
}

/// Single-core MAT cycles for a whole dense layer, including adder-tree fill.
pub fn cycles_mat(spec: &LayerSpec, cfg: &EngineConfig) -> Result<u64> {
    if spec.kind == LayerKind::DWConv {
        return Err(unroutable(spec, "depthwise layers cannot run on the MAT engine"));
    }
    let w = DenseWork::of(spec, cfg)?;
    Ok(w.units * w.mat + ceil_log2(cfg.t))
}

/// Single-core R-MAC cycles for a depthwise layer in self-accumulation mode.
pub fn cycles_rmac_dw(spec: &LayerSpec, cfg: &EngineConfig) -> Result<u64> {
    let w = DwWork::of(spec, cfg)?;
    Ok(w.rows as u64 * w.units_per_row * w.unit)
}

/// Single-core R-MAC cycles for a dense layer in down-forward mode.
pub fn cycles_rmac_dense(spec: &LayerSpec, cfg: &EngineConfig) -> Result<u64> {
    if !is_dense(spec) {
        return Err(unroutable(spec, "down-forward mode only serves dense layers"));
    }
    let units = (spec.pixels_out() * spec.out_channels.div_ceil(cfg.m)) as u64;
    Ok(units * reduction(spec).div_ceil(cfg.n) as u64 + ceil_log2(cfg.n))
}
