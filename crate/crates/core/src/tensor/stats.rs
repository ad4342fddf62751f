use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Per-channel and layer-wide extrema of an NCHW activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub per_channel_min: Vec<f32>,
    pub per_channel_max: Vec<f32>,
    pub layer_min: f32,
    pub layer_max: f32,
}

impl ChannelStats {
    /// Stats for `channels` channels with no observations yet.
    pub fn empty(channels: usize) -> Self {
        Self {
            per_channel_min: vec![f32::INFINITY; channels],
            per_channel_max: vec![f32::NEG_INFINITY; channels],
            layer_min: f32::INFINITY,
            layer_max: f32::NEG_INFINITY,
        }
    }

    pub fn channels(&self) -> usize {
        self.per_channel_min.len()
    }

    /// Running extrema: widens `self` to also cover `other`.
    pub fn merge(&mut self, other: &ChannelStats) -> Result<()> {
        if other.channels() != self.channels() {
            return Err(Error::shape(format!(
                "cannot merge stats over {} channels into {}",
                other.channels(),
                self.channels()
            )));
        }
        for (a, b) in self.per_channel_min.iter_mut().zip(&other.per_channel_min) {
            *a = a.min(*b);
        }
        for (a, b) in self.per_channel_max.iter_mut().zip(&other.per_channel_max) {
            *a = a.max(*b);
        }
        self.layer_min = self.layer_min.min(other.layer_min);
        self.layer_max = self.layer_max.max(other.layer_max);
        Ok(())
    }

    pub fn layer_range(&self) -> f32 {
        self.layer_max - self.layer_min
    }

    pub fn channel_range(&self, c: usize) -> f32 {
        self.per_channel_max[c] - self.per_channel_min[c]
    }
}

pub fn channel_stats(x: &Tensor<f32>) -> Result<ChannelStats> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let mut s = ChannelStats::empty(c);
    for b in 0..n {
        for ch in 0..c {
            let vals = &x.data()[(b * c + ch) * plane..][..plane];
            for &v in vals {
                if !v.is_finite() {
                    return Err(Error::NonFinite("channel_stats"));
                }
                s.per_channel_min[ch] = s.per_channel_min[ch].min(v);
                s.per_channel_max[ch] = s.per_channel_max[ch].max(v);
            }
        }
    }
    s.layer_min = s.per_channel_min.iter().copied().fold(f32::INFINITY, f32::min);
    s.layer_max = s.per_channel_max.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_tensor() {
        let x = Tensor::full(vec![2, 3, 4, 4], 2.0).unwrap();
        let s = channel_stats(&x).unwrap();
        assert!(s.per_channel_min.iter().chain(&s.per_channel_max).all(|&v| v == 2.0));
        assert_eq!((s.layer_min, s.layer_max), (2.0, 2.0));
    }

    #[test]
    fn two_channel_variation_ratio() {
        let x = Tensor::new(vec![1, 2, 1, 2], vec![2.66, 3.11, -0.38, 3.49]).unwrap();
        let s = channel_stats(&x).unwrap();
        assert!((s.layer_range() - 3.87).abs() < 1e-5);
        assert!((s.channel_range(0) - 0.45).abs() < 1e-5);
        let ratio = s.layer_range() / s.channel_range(0);
        assert!((ratio - 8.6).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn rejects_non_rank4() {
        let x = Tensor::full(vec![4, 4], 1.0).unwrap();
        assert!(channel_stats(&x).is_err());
    }

    #[test]
    fn merge_is_running_extrema() {
        let a = channel_stats(&Tensor::new(vec![1, 2, 1, 1], vec![1.0, -2.0]).unwrap()).unwrap();
        let b = channel_stats(&Tensor::new(vec![1, 2, 1, 1], vec![-1.0, 5.0]).unwrap()).unwrap();
        let mut m = a.clone();
        m.merge(&b).unwrap();
        assert_eq!(m.per_channel_min, vec![-1.0, -2.0]);
        assert_eq!(m.per_channel_max, vec![1.0, 5.0]);
        assert_eq!((m.layer_min, m.layer_max), (-2.0, 5.0));
    }

    proptest! {
        #[test]
        fn matches_full_scan(
            (c, data) in (1usize..5).prop_flat_map(|c| (Just(c), prop::collection::vec(-100f32..100.0, c * 6)))
        ) {
            let x = Tensor::new(vec![2, c, 1, 3], data.clone()).unwrap();
            let s = channel_stats(&x).unwrap();
            for ch in 0..c {
                let vals: Vec<f32> = (0..2)
                    .flat_map(|b| data[(b * c + ch) * 3..][..3].to_vec())
                    .collect();
                let lo = vals.iter().copied().fold(f32::INFINITY, f32::min);
                let hi = vals.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                prop_assert_eq!(s.per_channel_min[ch], lo);
                prop_assert_eq!(s.per_channel_max[ch], hi);
                prop_assert!(vals.iter().all(|v| *v >= lo && *v <= hi));
            }
            prop_assert_eq!(s.layer_min, data.iter().copied().fold(f32::INFINITY, f32::min));
            prop_assert_eq!(s.layer_max, data.iter().copied().fold(f32::NEG_INFINITY, f32::max));
        }
    }
}
