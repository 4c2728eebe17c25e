//! State-space sequence machinery.

pub mod block;
pub mod linear;
pub mod scan;
pub mod selective;

pub use block::{Cab, Init, ParamKind, ParamSource, ParamSpec, Rssb, Ss2d, VarMap};
pub use linear::{build_kernel, discretize_zoh, ssm_conv, ssm_recurrence, DiscreteSsm, SsmParams};
pub use scan::{ss2d, ChannelSsm, ScanOrder};
