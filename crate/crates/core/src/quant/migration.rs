use crate::error::{Error, Result};
use crate::tensor::{ChannelStats, Tensor};

/// `M_i = max(A_i) / mean_j max(A_j)`; channels with a non-positive maximum keep `M_i = 1`.
pub fn compute_migration_factors(stats: &ChannelStats) -> Result<Vec<f32>> {
    let maxima = &stats.per_channel_max;
    if maxima.is_empty() {
        return Err(Error::invalid("no channels to migrate"));
    }
    if maxima.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite("migration maxima"));
    }
    if maxima.iter().all(|&m| m <= 0.0) {
        return Err(Error::invalid("all channel maxima are non-positive; migration is undefined"));
    }
    let mean = maxima.iter().map(|&m| m as f64).sum::<f64>() / maxima.len() as f64;
    if mean <= 0.0 {
        return Err(Error::invalid(format!("mean channel maximum {mean} is not positive")));
    }
    Ok(maxima
        .iter()
        .map(|&m| if m <= 0.0 { 1.0 } else { (m as f64 / mean) as f32 })
        .collect())
}

/// Scales depthwise filter `i` by `M_i` and returns the fused activation scales `S_a·M_i`.
pub fn apply_channel_migration(dw_weights: &Tensor<f32>, act_scale: f32, m: &[f32]) -> Result<(Tensor<f32>, Vec<f32>)> {
    let (o, ci, _, _) = dw_weights.dims4()?;
    if ci != 1 || o != m.len() {
        return Err(Error::shape(format!(
            "depthwise weights {:?} do not match {} migration factors",
            dw_weights.shape(),
            m.len()
        )));
    }
    if let Some(bad) = m.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!("migration factor {bad} is not positive")));
    }
    let per = dw_weights.len() / o;
    let data = dw_weights
        .data()
        .iter()
        .enumerate()
        .map(|(i, &w)| w * m[i / per])
        .collect();
    let fused = m.iter().map(|&v| act_scale * v).collect();
    Ok((Tensor::new(dw_weights.shape().to_vec(), data)?, fused))
}
