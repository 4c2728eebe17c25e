//! Quantizers: the uniform grid quantizer, the statistics-driven activation
//! quantizer (DLS), the learnable-threshold weight quantizer (RFA) and
//! n-bit weight packing.

pub mod dls;
pub mod pack;
pub mod rfa;
pub mod stats;
pub mod uniform;

pub use dls::{dls_quantize, dls_quantize_var, dls_scale_shift, init_dls, DlsInit, DlsParams};
pub use pack::{pack_weights, unpack_weights, PackedWeights};
pub use rfa::{init_rfa, rfa_backward, rfa_forward, rfa_levels, rfa_quantize_var, RfaParams};
pub use stats::{compute_stats, StatsVector};
pub use uniform::{check_bits, clip_int, fake_quant, quantize_uniform, UniformQuantConfig, SUPPORTED_BITS};
