//! Deterministic generators reproducing the activation pathologies that
//! migration and shifting target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// `[1, channels, spatial, spatial]` tensor where channel `c` is uniform in
/// `±scale_span^(c / (channels - 1))`.
pub fn synth_variation(channels: usize, spatial: usize, scale_span: f32, seed: u64) -> Result<Tensor<f32>> {
    if !(scale_span.is_finite() && scale_span >= 1.0) {
        return Err(Error::invalid(format!("scale_span must be >= 1, got {scale_span}")));
    }
    if channels == 0 || spatial == 0 {
        return Err(Error::invalid("channels and spatial must be positive"));
    }
    if channels < 2 && scale_span > 1.0 {
        return Err(Error::invalid("a scale span needs at least two channels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = spatial * spatial;
    let mut data = Vec::with_capacity(channels * plane);
    for c in 0..channels {
        let t = if channels > 1 { c as f32 / (channels - 1) as f32 } else { 0.0 };
        let bound = scale_span.powf(t);
        data.extend((0..plane).map(|_| rng.random_range(-bound..=bound)));
    }
    Tensor::new(vec![1, channels, spatial, spatial], data)
}

/// `[1, channels, spatial, spatial]` tensor whose channels are narrow bands
/// (half-width in `[0.05, 0.5]`) centred at offsets uniform in `±offset_span`.
pub fn synth_asymmetry(channels: usize, spatial: usize, offset_span: f32, seed: u64) -> Result<Tensor<f32>> {
    if !(offset_span.is_finite() && offset_span >= 0.0) {
        return Err(Error::invalid(format!("offset_span must be >= 0, got {offset_span}")));
    }
    if channels == 0 || spatial == 0 {
        return Err(Error::invalid("channels and spatial must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = spatial * spatial;
    let mut data = Vec::with_capacity(channels * plane);
    for _ in 0..channels {
        let centre = if offset_span > 0.0 {
            rng.random_range(-offset_span..=offset_span)
        } else {
            0.0
        };
        let half = rng.random_range(0.05f32..=0.5);
        data.extend((0..plane).map(|_| centre + rng.random_range(-half..=half)));
    }
    Tensor::new(vec![1, channels, spatial, spatial], data)
}
