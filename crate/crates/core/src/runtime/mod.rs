//! Integer-only execution of quantized models.

mod attention;
mod fakequant;
mod forward;
mod kernels;
mod lod;
mod requant;

pub use attention::{attention_int, HeadTrace};
pub use fakequant::{crosscheck, forward_fakequant, CrossCheck};
pub use forward::{forward_int, forward_int_trace, quantize_input, validate, IntOutput};
pub use kernels::{int_conv2d, int_conv2d_with, int_matmul};
pub use lod::{
    divisor_exponent, lod, log2_round, log2_round_nearest, log2_round_with, quantize_divisor_log2,
    quantize_divisor_log2_with, Log2Divisor, Log2Rounding, DEFAULT_LOG2_WINDOW,
};
pub use requant::{clip, requant_value, requantize, requantize_wide, rescale, rne_div, rne_shift};
