//! Post-training quantization: uniform grids, channel-wise migration, filter-wise
//! shifting, dyadic rescales, calibration and whole-model orchestration.

mod ablation;
mod artifact;
mod calib;
mod dyadic;
mod engine;
mod migration;
mod search;
mod shift;
mod uniform;

pub use ablation::{
    divisor_stress, migration_ablation, migration_mse, shifting_ablation, shifting_mse, Ablation, DivisorStress, STRESS_RANGE,
};
pub use artifact::{load_quant, save_quant, QUANT_FILE};
pub use calib::{calibrate, synthetic_inputs, AttnSourceStats, CalibRecord, RESERVOIR_CAP};
pub use dyadic::{dyadic_approx, Dyadic, MAX_SHIFT};
pub use engine::{
    accumulator_bound, build_lut, quantize_model, ActQuant, AddQuant, AttnQuant, AttnSourceQuant, ConvQuant,
    Coverage, DivisorMode, NodeQuant, PoolQuant, QuantModel, QuantParams, QuantPolicy, Scheme, ValueQuant,
};
pub use migration::{apply_channel_migration, compute_migration_factors};
pub use search::{percentile_grid, quant_mse, scale_search};
pub use shift::{compute_filter_shift, compute_filter_shift_with, update_bias_for_shift, ShiftRule};
pub use uniform::{dequantize, fake_quant_mse, int_range, quantize_i8, quantize_uniform, quantize_value};
