//! Files, datasets, configuration and the subcommands of the `qssm` tool.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod manifest;
pub mod png;
pub mod stats;
pub mod toy;

pub use commands::{
    calibration_batch, cmd_eval, cmd_export, cmd_train, exit_code, initial_model, load_split, run_training,
    write_metrics_csv, EvalReport, EvalRow, ExportReport, TrainArtifacts, CHECKPOINT_FILE, MANIFEST_FILE, METRICS_FILE,
};
pub use config::{Overrides, RunConfig, SEED_ENV};
pub use dataset::{DatasetEntry, DatasetLayout};
pub use manifest::{version_string, RunManifest};
pub use png::{load_png, save_png};
pub use stats::{collect_stats, histogram, select_sites, HistRow, PhiRow, StatsDump};
pub use toy::{toy_dir, toy_image, write_toy_dataset, TOY_COUNT, TOY_SIZE, TOY_VAL_COUNT};
