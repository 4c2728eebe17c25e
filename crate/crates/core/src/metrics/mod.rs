//! Restoration quality metrics and model-complexity accounting.

pub mod complexity;
pub mod quality;

pub use complexity::{count_complexity, ComplexityReport};
pub use quality::{crop_border, format_db, psnr, quality_y, rgb_to_y, ssim, to_8bit_grid, QualityReport};
