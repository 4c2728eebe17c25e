//! Restoration networks assembled from residual state-space blocks, and
//! their quantized counterparts.

pub mod checkpoint;
pub mod config;
pub mod net;
pub mod quantize;
pub mod store;

pub use config::{ModelConfig, QuantizerKind, Task, FULL_PRECISION_BITS, SITE_KINDS};
pub use net::{build_model, dls_keys, levels_key, range_key, site_kind, thresholds_key, ActQuant, Binder, OpEntry, Observer, RestorationNet, WeightQuant};
pub use quantize::{quantize_model, QuantCensus};
pub use store::ParamStore;
