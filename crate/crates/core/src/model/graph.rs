use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{resolve_head_dim, BlockConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    GenericConv,
    PWConv,
    DWConv,
    MatMul,
    ReLU,
    Hswish,
}

impl LayerKind {
    pub fn has_weights(self) -> bool {
        matches!(self, LayerKind::GenericConv | LayerKind::PWConv | LayerKind::DWConv)
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::GenericConv => "generic_conv",
            LayerKind::PWConv => "pwconv",
            LayerKind::DWConv => "dwconv",
            LayerKind::MatMul => "matmul",
            LayerKind::ReLU => "relu",
            LayerKind::Hswish => "hswish",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    None,
    Relu,
    Hswish,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::None => x,
            Activation::Relu => x.max(0.0),
            Activation::Hswish => hswish(x),
        }
    }

    pub fn apply_f64(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Relu => x.max(0.0),
            Activation::Hswish => x * (x + 3.0).clamp(0.0, 6.0) / 6.0,
        }
    }
}

pub fn hswish(x: f32) -> f32 {
    x * (x + 3.0).clamp(0.0, 6.0) / 6.0
}

/// Geometry of a multi-source ReLU linear attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttnSpec {
    pub heads: usize,
    pub dim: usize,
    pub sources: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
    pub spatial_in: (usize, usize),
    pub spatial_out: (usize, usize),
    pub has_bn: bool,
    pub has_act: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attn: Option<AttnSpec>,
}

impl LayerSpec {
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn pixels_out(&self) -> usize {
        self.spatial_out.0 * self.spatial_out.1
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("layer `{}`: {m}", self.name)));
        if self.kind == LayerKind::PWConv && self.kernel != 1 {
            return bad("pointwise conv must have kernel 1");
        }
        if self.kind == LayerKind::DWConv
            && (self.in_channels != self.out_channels || self.groups != self.in_channels)
        {
            return bad("depthwise conv must keep channel count with groups == channels");
        }
        if ![1, 3, 5].contains(&self.kernel) {
            return bad("kernel must be 1, 3 or 5");
        }
        if ![1, 2].contains(&self.stride) {
            return bad("stride must be 1 or 2");
        }
        if self.groups == 0 || self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return bad("channels not divisible by groups");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Option<Tensor<f32>>,
    pub bias: Vec<f32>,
    pub bn: Option<BatchNorm>,
    pub act: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Stem,
    DSConv,
    MBConv,
    MSA,
    Head,
    Layer,
}

/// Layer indices grouped the way the hardware schedules them.
/// MBConv: `[pw1, dw, pw2]`; DSConv: `[dw, pw]`; MSA: `[qkv, agg_dw, agg_pw, attention, proj]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub name: String,
    pub layers: Vec<usize>,
    pub residual: bool,
}

/// Value ids: 0 is the model input, node `i` produces value `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Conv { layer: usize, input: usize },
    Act { layer: usize, input: usize },
    Add { a: usize, b: usize },
    Attention { layer: usize, sources: Vec<usize> },
    GlobalPool { input: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub op: Op,
    /// Output `(channels, height, width)`.
    pub shape: (usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    pub input: (usize, usize, usize),
    pub layers: Vec<Layer>,
    pub blocks: Vec<Block>,
    pub nodes: Vec<Node>,
    pub num_classes: usize,
}

impl ModelGraph {
    pub fn value_shape(&self, v: usize) -> (usize, usize, usize) {
        if v == 0 {
            self.input
        } else {
            self.nodes[v - 1].shape
        }
    }

    pub fn output_value(&self) -> usize {
        self.nodes.len()
    }

    pub fn layer_by_name(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.spec.name == name)
    }

    /// Layers carrying weights, i.e. those the quantizer produces weight records for.
    pub fn quantizable_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].spec.kind.has_weights())
            .collect()
    }

    /// Node index that executes `layer`.
    pub fn node_of_layer(&self, layer: usize) -> Option<usize> {
        self.nodes.iter().position(|n| match &n.op {
            Op::Conv { layer: l, .. } | Op::Act { layer: l, .. } | Op::Attention { layer: l, .. } => *l == layer,
            _ => false,
        })
    }

    /// Number of nodes reading each value.
    pub fn consumers(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len() + 1];
        for (i, n) in self.nodes.iter().enumerate() {
            match &n.op {
                Op::Conv { input, .. } | Op::Act { input, .. } | Op::GlobalPool { input } => out[*input].push(i),
                Op::Add { a, b } => {
                    out[*a].push(i);
                    out[*b].push(i);
                }
                Op::Attention { sources, .. } => sources.iter().for_each(|s| out[*s].push(i)),
            }
        }
        out
    }

    pub fn is_folded(&self) -> bool {
        self.layers.iter().all(|l| l.bn.is_none() && !l.spec.has_bn)
    }
}

fn conv_out(h: usize, k: usize, s: usize) -> usize {
    (h + 2 * (k / 2) - k) / s + 1
}

struct Builder {
    rng: ChaCha8Rng,
    layers: Vec<Layer>,
    blocks: Vec<Block>,
    nodes: Vec<Node>,
    cur: usize,
    shape: (usize, usize, usize),
}

impl Builder {
    fn push_node(&mut self, name: String, op: Op, shape: (usize, usize, usize)) -> usize {
        self.nodes.push(Node { name, op, shape });
        self.nodes.len()
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: String,
        input: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bn: bool,
        act: Activation,
    ) -> Result<(usize, usize)> {
        let (c, h, w) = self.value_shape(input);
        let kind = if groups == c && groups == out_ch && groups > 1 {
            LayerKind::DWConv
        } else if kernel == 1 {
            LayerKind::PWConv
        } else {
            LayerKind::GenericConv
        };
        let spatial_out = (conv_out(h, kernel, stride), conv_out(w, kernel, stride));
        let spec = LayerSpec {
            name: name.clone(),
            kind,
            in_channels: c,
            out_channels: out_ch,
            kernel,
            stride,
            groups,
            spatial_in: (h, w),
            spatial_out,
            has_bn: bn,
            has_act: act != Activation::None,
            attn: None,
        };
        spec.check()?;
        let fan_in = (c / groups) * kernel * kernel;
        let bound = (3.0 / fan_in as f32).sqrt();
        let n = out_ch * fan_in;
        let weight = Tensor::new(
            vec![out_ch, c / groups, kernel, kernel],
            (0..n).map(|_| self.rng.random_range(-bound..bound)).collect(),
        )?;
        let bias = (0..out_ch).map(|_| self.rng.random_range(-0.1..0.1)).collect();
        let bn = bn.then(|| BatchNorm {
            gamma: (0..out_ch).map(|_| self.rng.random_range(0.5..1.5)).collect(),
            beta: (0..out_ch).map(|_| self.rng.random_range(-0.2..0.2)).collect(),
            mean: (0..out_ch).map(|_| self.rng.random_range(-0.2..0.2)).collect(),
            var: (0..out_ch).map(|_| self.rng.random_range(0.5..1.5)).collect(),
            eps: 1e-5,
        });
        self.layers.push(Layer { spec, weight: Some(weight), bias, bn, act });
        let layer = self.layers.len() - 1;
        let v = self.push_node(name, Op::Conv { layer, input }, (out_ch, spatial_out.0, spatial_out.1));
        Ok((layer, v))
    }

    fn value_shape(&self, v: usize) -> (usize, usize, usize) {
        if v == 0 {
            self.shape
        } else {
            self.nodes[v - 1].shape
        }
    }

    fn add(&mut self, name: String, a: usize, b: usize) -> usize {
        let shape = self.value_shape(a);
        self.push_node(name, Op::Add { a, b }, shape)
    }

    fn mbconv(&mut self, name: &str, out_ch: usize, expansion: usize, kernel: usize, stride: usize) -> Result<()> {
        let x = self.cur;
        let (c, _, _) = self.value_shape(x);
        let mid = c * expansion;
        let (l1, v1) = self.conv(format!("{name}.pw1"), x, mid, 1, 1, 1, true, Activation::Hswish)?;
        let (l2, v2) = self.conv(format!("{name}.dw"), v1, mid, kernel, stride, mid, true, Activation::Hswish)?;
        let (l3, mut v3) = self.conv(format!("{name}.pw2"), v2, out_ch, 1, 1, 1, true, Activation::None)?;
        let residual = stride == 1 && c == out_ch;
        if residual {
            v3 = self.add(format!("{name}.add"), v3, x);
        }
        self.blocks.push(Block { kind: BlockKind::MBConv, name: name.into(), layers: vec![l1, l2, l3], residual });
        self.cur = v3;
        Ok(())
    }

    fn dsconv(&mut self, name: &str, out_ch: usize, kernel: usize, stride: usize) -> Result<()> {
        let x = self.cur;
        let (c, _, _) = self.value_shape(x);
        let (l1, v1) = self.conv(format!("{name}.dw"), x, c, kernel, stride, c, true, Activation::Hswish)?;
        let (l2, mut v2) = self.conv(format!("{name}.pw"), v1, out_ch, 1, 1, 1, true, Activation::None)?;
        let residual = stride == 1 && c == out_ch;
        if residual {
            v2 = self.add(format!("{name}.add"), v2, x);
        }
        self.blocks.push(Block { kind: BlockKind::DSConv, name: name.into(), layers: vec![l1, l2], residual });
        self.cur = v2;
        Ok(())
    }

    fn msa(&mut self, name: &str, channels: usize, dim: usize, kernel: usize) -> Result<()> {
        let x = self.cur;
        let (c, h, w) = self.value_shape(x);
        if c != channels {
            return Err(Error::Config(format!(
                "block `{name}`: attention expects {channels} input channels, got {c}"
            )));
        }
        let heads = c / dim;
        let (lq, vq) = self.conv(format!("{name}.qkv"), x, 3 * c, 1, 1, 1, false, Activation::None)?;
        let (la, va) =
            self.conv(format!("{name}.agg_dw"), vq, 3 * c, kernel, 1, 3 * c, false, Activation::None)?;
        let (lp, vp) =
            self.conv(format!("{name}.agg_pw"), va, 3 * c, 1, 1, 3 * heads, false, Activation::None)?;
        let spec = LayerSpec {
            name: format!("{name}.attn"),
            kind: LayerKind::MatMul,
            in_channels: 6 * c,
            out_channels: 2 * c,
            kernel: 1,
            stride: 1,
            groups: 1,
            spatial_in: (h, w),
            spatial_out: (h, w),
            has_bn: false,
            has_act: false,
            attn: Some(AttnSpec { heads, dim, sources: 2 }),
        };
        self.layers.push(Layer { spec, weight: None, bias: Vec::new(), bn: None, act: Activation::None });
        let lt = self.layers.len() - 1;
        let vt = self.push_node(
            format!("{name}.attn"),
            Op::Attention { layer: lt, sources: vec![vq, vp] },
            (2 * c, h, w),
        );
        let (lo, vo) = self.conv(format!("{name}.proj"), vt, c, 1, 1, 1, true, Activation::None)?;
        let out = self.add(format!("{name}.add"), vo, x);
        self.blocks.push(Block {
            kind: BlockKind::MSA,
            name: name.into(),
            layers: vec![lq, la, lp, lt, lo],
            residual: true,
        });
        self.cur = out;
        Ok(())
    }

    fn head(&mut self, widths: &[usize], classes: usize) -> Result<()> {
        let mut layers = Vec::new();
        let (l, mut v) = self.conv("head.pw".into(), self.cur, widths[0], 1, 1, 1, true, Activation::Hswish)?;
        layers.push(l);
        let (c, _, _) = self.value_shape(v);
        v = self.push_node("head.pool".into(), Op::GlobalPool { input: v }, (c, 1, 1));
        for (i, &wd) in widths[1..].iter().enumerate() {
            let (l, nv) = self.conv(format!("head.fc{i}"), v, wd, 1, 1, 1, false, Activation::Hswish)?;
            layers.push(l);
            v = nv;
        }
        let (l, nv) = self.conv("head.classifier".into(), v, classes, 1, 1, 1, false, Activation::None)?;
        layers.push(l);
        self.blocks.push(Block { kind: BlockKind::Head, name: "head".into(), layers, residual: false });
        self.cur = nv;
        Ok(())
    }

    fn activation_layer(&mut self, name: String, kind: &str) -> Result<()> {
        let (lk, act) = match kind.to_ascii_lowercase().as_str() {
            "relu" => (LayerKind::ReLU, Activation::Relu),
            "hswish" => (LayerKind::Hswish, Activation::Hswish),
            other => return Err(Error::Config(format!("layer `{name}`: unknown layer kind `{other}`"))),
        };
        let (c, h, w) = self.value_shape(self.cur);
        let spec = LayerSpec {
            name: name.clone(),
            kind: lk,
            in_channels: c,
            out_channels: c,
            kernel: 1,
            stride: 1,
            groups: 1,
            spatial_in: (h, w),
            spatial_out: (h, w),
            has_bn: false,
            has_act: true,
            attn: None,
        };
        self.layers.push(Layer { spec, weight: None, bias: Vec::new(), bn: None, act });
        let layer = self.layers.len() - 1;
        self.blocks.push(Block { kind: BlockKind::Layer, name: name.clone(), layers: vec![layer], residual: false });
        self.cur = self.push_node(name, Op::Act { layer, input: self.cur }, (c, h, w));
        Ok(())
    }
}

/// Builds the layer graph with fully resolved shapes. Weights, biases and
/// batch-norm statistics are drawn deterministically from `seed`.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<ModelGraph> {
    cfg.validate()?;
    let r = cfg.input.resolution;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        layers: Vec::new(),
        blocks: Vec::new(),
        nodes: Vec::new(),
        cur: 0,
        shape: (cfg.input.channels, r, r),
    };
    let mut num_classes = 0;
    for (si, stage) in cfg.stages.iter().enumerate() {
        let mut bi = 0;
        let next = |bi: &mut usize| {
            let n = format!("stage{si}.b{bi}");
            *bi += 1;
            n
        };
        for block in &stage.blocks {
            match block {
                BlockConfig::Stem { channels, kernel, stride } => {
                    let (l, v) =
                        b.conv("stem.conv".into(), 0, *channels, *kernel, *stride, 1, true, Activation::Hswish)?;
                    b.blocks.push(Block { kind: BlockKind::Stem, name: "stem".into(), layers: vec![l], residual: false });
                    b.cur = v;
                }
                BlockConfig::Dsconv { channels, kernel, stride, repeats } => {
                    for i in 0..*repeats {
                        b.dsconv(&next(&mut bi), *channels, *kernel, if i == 0 { *stride } else { 1 })?;
                    }
                }
                BlockConfig::Mbconv { channels, expansion, kernel, stride, repeats } => {
                    for i in 0..*repeats {
                        b.mbconv(&next(&mut bi), *channels, *expansion, *kernel, if i == 0 { *stride } else { 1 })?;
                    }
                }
                BlockConfig::Msa { channels, dim, heads, kernel, expansion, repeats } => {
                    let d = resolve_head_dim(*channels, *dim, *heads)?;
                    for _ in 0..*repeats {
                        let name = next(&mut bi);
                        b.msa(&name, *channels, d, *kernel)?;
                        b.mbconv(&format!("{name}.local"), *channels, *expansion, 3, 1)?;
                    }
                }
                BlockConfig::Head { head_widths, num_classes: n } => {
                    b.head(head_widths, *n)?;
                    num_classes = *n;
                }
                BlockConfig::Layer { kind, name } => {
                    let n = name.clone().unwrap_or_else(|| next(&mut bi));
                    b.activation_layer(n, kind)?;
                }
            }
        }
    }
    if b.nodes.is_empty() {
        return Err(Error::Config("model has no layers".into()));
    }
    let (c, h, w) = b.value_shape(b.cur);
    if num_classes == 0 {
        num_classes = c * h * w;
    }
    Ok(ModelGraph {
        name: cfg.name.clone().unwrap_or_else(|| "model".into()),
        input: b.shape,
        layers: b.layers,
        blocks: b.blocks,
        nodes: b.nodes,
        num_classes,
    })
}
