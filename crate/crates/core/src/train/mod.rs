//! Quantization-aware training: losses, schedule, augmentation,
//! degradations and the optimization loop.

pub mod adam;
pub mod augment;
pub mod degrade;
pub mod loss;
pub mod preset;
pub mod trainer;

pub use adam::Adam;
pub use augment::{augment, Dihedral};
pub use degrade::{degrade, jpeg_like, DegradationSpec};
pub use loss::{charbonnier_loss, l1_loss, loss, LossKind, CHARBONNIER_EPS};
pub use preset::{lr_at, TrainPreset, DESK_GT_SIZE, DESK_ITERS, FULL_ITERS, MILESTONES};
pub use trainer::{
    check_grid, crop, default_degradation, mod_crop, prepare_val, qat_train, sample_patch, val_border, validate, LogRow,
    Sample, TrainOptions, TrainOutcome, ValPair,
};
