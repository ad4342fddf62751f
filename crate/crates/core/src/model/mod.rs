//! Float reference of the conv/linear-attention hybrid: configs, graph
//! construction, batch-norm folding, forward execution and operation census.

mod attention;
mod census;
mod config;
mod fold;
mod forward;
mod graph;

pub use attention::{relu_linear_attention, EPS_DIV};
pub use census::{layer_macs, op_census, OpCensus};
pub use config::{BlockConfig, InputConfig, ModelConfig, StageConfig, DEFAULT_HEAD_DIM};
pub use fold::fold_bn;
pub use forward::{forward_float, forward_float_capture, forward_float_with, Capture, ForwardOutput};
pub use graph::{
    build_model, hswish, Activation, AttnSpec, BatchNorm, Block, BlockKind, Layer, LayerKind, LayerSpec,
    ModelGraph, Node, Op,
};

#[cfg(test)]
pub(crate) mod tests;
