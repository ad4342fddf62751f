use serde::{Deserialize, Serialize};

use super::graph::{LayerKind, LayerSpec, ModelGraph};

/// Multiply-accumulate counts per operation kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OpCensus {
    pub generic_conv: u64,
    pub pwconv: u64,
    pub dwconv: u64,
    pub matmul: u64,
    pub total_macs: u64,
    /// Total MACs / 1e9.
    pub gmacs: f64,
    /// 2 x MACs / 1e9.
    pub gflops: f64,
}

impl OpCensus {
    /// Percent shares in `(generic_conv, pwconv, dwconv, matmul)` order.
    pub fn shares(&self) -> [f64; 4] {
        let t = self.total_macs.max(1) as f64;
        [self.generic_conv, self.pwconv, self.dwconv, self.matmul].map(|v| 100.0 * v as f64 / t)
    }

    fn add(&mut self, kind: LayerKind, macs: u64) {
        match kind {
            LayerKind::GenericConv => self.generic_conv += macs,
            LayerKind::PWConv => self.pwconv += macs,
            LayerKind::DWConv => self.dwconv += macs,
            LayerKind::MatMul => self.matmul += macs,
            LayerKind::ReLU | LayerKind::Hswish => {}
        }
    }
}

/// Closed-form MACs of one layer (batch 1).
pub fn layer_macs(spec: &LayerSpec) -> u64 {
    let pixels = spec.pixels_out() as u64;
    match spec.kind {
        LayerKind::GenericConv | LayerKind::PWConv | LayerKind::DWConv => {
            pixels
                * spec.out_channels as u64
                * (spec.in_channels / spec.groups) as u64
                * (spec.kernel * spec.kernel) as u64
        }
        LayerKind::MatMul => match spec.attn {
            // Kᵀ[V|1] then Q·[S|ksum], per head and source.
            Some(a) => {
                let (n, d) = (pixels, a.dim as u64);
                (a.sources * a.heads) as u64 * 2 * n * d * (d + 1)
            }
            None => pixels * spec.in_channels as u64 * spec.out_channels as u64,
        },
        LayerKind::ReLU | LayerKind::Hswish => 0,
    }
}

pub fn op_census(graph: &ModelGraph) -> OpCensus {
    let mut c = OpCensus::default();
    for l in &graph.layers {
        c.add(l.spec.kind, layer_macs(&l.spec));
    }
    c.total_macs = c.generic_conv + c.pwconv + c.dwconv + c.matmul;
    c.gmacs = c.total_macs as f64 / 1e9;
    c.gflops = 2.0 * c.gmacs;
    c
}
