use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub input: InputConfig,
    pub stages: Vec<StageConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub resolution: usize,
    #[serde(default = "default_in_channels")]
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub blocks: Vec<BlockConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum BlockConfig {
    Stem {
        channels: usize,
        #[serde(default = "default_k3")]
        kernel: usize,
        #[serde(default = "default_s2")]
        stride: usize,
    },
    Dsconv {
        channels: usize,
        #[serde(default = "default_k3")]
        kernel: usize,
        #[serde(default = "default_s1")]
        stride: usize,
        #[serde(default = "default_one")]
        repeats: usize,
    },
    Mbconv {
        channels: usize,
        #[serde(default = "default_expansion")]
        expansion: usize,
        #[serde(default = "default_k3")]
        kernel: usize,
        #[serde(default = "default_s1")]
        stride: usize,
        #[serde(default = "default_one")]
        repeats: usize,
    },
    Msa {
        channels: usize,
        #[serde(default)]
        dim: Option<usize>,
        #[serde(default)]
        heads: Option<usize>,
        #[serde(default = "default_k5")]
        kernel: usize,
        #[serde(default = "default_expansion")]
        expansion: usize,
        #[serde(default = "default_one")]
        repeats: usize,
    },
    Head {
        head_widths: Vec<usize>,
        num_classes: usize,
    },
    Layer {
        kind: String,
        #[serde(default)]
        name: Option<String>,
    },
}

fn default_in_channels() -> usize {
    3
}
fn default_k3() -> usize {
    3
}
fn default_k5() -> usize {
    5
}
fn default_s1() -> usize {
    1
}
fn default_s2() -> usize {
    2
}
fn default_one() -> usize {
    1
}
fn default_expansion() -> usize {
    4
}

/// Head dimension used when an attention block gives neither `dim` nor `heads`.
pub const DEFAULT_HEAD_DIM: usize = 16;

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Structural checks that do not need shape propagation.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input.resolution == 0 || self.input.channels == 0 {
            return bad("input resolution and channels must be positive".into());
        }
        let blocks: Vec<&BlockConfig> = self.stages.iter().flat_map(|s| &s.blocks).collect();
        if blocks.is_empty() {
            return bad("model has no blocks".into());
        }
        for (i, b) in blocks.iter().enumerate() {
            match b {
                BlockConfig::Stem { channels, kernel, stride } => {
                    if i != 0 {
                        return bad("stem must be the first block".into());
                    }
                    check_conv(*channels, *kernel, *stride, &[1, 3, 5])?;
                }
                BlockConfig::Dsconv { channels, kernel, stride, repeats }
                | BlockConfig::Mbconv { channels, kernel, stride, repeats, .. } => {
                    check_conv(*channels, *kernel, *stride, &[3, 5])?;
                    if *repeats == 0 {
                        return bad("repeats must be at least 1".into());
                    }
                    if let BlockConfig::Mbconv { expansion: 0, .. } = b {
                        return bad("mbconv expansion must be at least 1".into());
                    }
                }
                BlockConfig::Msa { channels, dim, heads, kernel, expansion, repeats } => {
                    check_conv(*channels, *kernel, 1, &[3, 5])?;
                    if *repeats == 0 || *expansion == 0 {
                        return bad("msa repeats and expansion must be at least 1".into());
                    }
                    let d = resolve_head_dim(*channels, *dim, *heads)?;
                    if d == 0 {
                        return bad("msa head dimension must be positive".into());
                    }
                }
                BlockConfig::Head { head_widths, num_classes } => {
                    if i + 1 != blocks.len() {
                        return bad("head must be the last block".into());
                    }
                    if head_widths.is_empty() || head_widths.contains(&0) || *num_classes == 0 {
                        return bad("head widths and class count must be positive".into());
                    }
                }
                BlockConfig::Layer { kind, .. } => {
                    if kind.trim().is_empty() {
                        return bad("layer kind must not be empty".into());
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn resolve_head_dim(channels: usize, dim: Option<usize>, heads: Option<usize>) -> Result<usize> {
    let d = match (dim, heads) {
        (Some(d), None) => d,
        (None, Some(h)) if h > 0 && channels % h == 0 => channels / h,
        (None, Some(h)) => {
            return Err(Error::Config(format!("{channels} channels not divisible into {h} heads")))
        }
        (Some(d), Some(h)) if d * h == channels => d,
        (Some(d), Some(h)) => {
            return Err(Error::Config(format!("heads {h} x dim {d} != channels {channels}")))
        }
        (None, None) => DEFAULT_HEAD_DIM.min(channels),
    };
    if d == 0 || channels % d != 0 {
        return Err(Error::Config(format!("{channels} channels not divisible by head dim {d}")));
    }
    Ok(d)
}

fn check_conv(channels: usize, kernel: usize, stride: usize, kernels: &[usize]) -> Result<()> {
    if channels == 0 {
        return Err(Error::Config("channels must be positive".into()));
    }
    if !kernels.contains(&kernel) {
        return Err(Error::Config(format!("kernel {kernel} not in {kernels:?}")));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::Config(format!("stride {stride} not in [1, 2]")));
    }
    Ok(())
}
