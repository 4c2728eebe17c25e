//! The work behind each subcommand, kept free of argument parsing so tests
//! and the acceptance harness can drive it directly.

use super::config::RunConfig;
use super::dataset::DatasetLayout;
use super::manifest::{unix_now, version_string, RunManifest};
use crate::error::{Error, Result};
use crate::metrics::{count_complexity, format_db, quality_y, ComplexityReport};
use crate::model::{build_model, checkpoint, levels_key, quantize_model, RestorationNet, FULL_PRECISION_BITS};
use crate::quant::pack_weights;
use crate::tensor::Tensor;
use crate::train::{
    default_degradation, mod_crop, prepare_val, qat_train, sample_patch, val_border, LogRow, Sample, TrainOutcome,
    ValPair,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::path::{Path, PathBuf};

pub const CHECKPOINT_FILE: &str = "checkpoint.qirc";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
/// Degradations of held-out images use this seed (plus the image index)
/// regardless of the run seed, so every run validates on the same inputs.
pub const VAL_SEED: u64 = 0;
const CALIB_SALT: u64 = 0xCA11_B0A7;

/// Process exit status for an error: 2 configuration or usage, 3 data,
/// 4 numeric failure, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Dataset(_) | Error::Image { .. } | Error::Io(_) | Error::Csv(_) | Error::BadMagic(_) | Error::Format(_) => 3,
        Error::Diverged { .. } | Error::NonFinite(_) => 4,
        _ => 1,
    }
}

fn open_dataset(hr_dir: &Path, lr_dir: Option<&Path>) -> Result<DatasetLayout> {
    if !hr_dir.is_dir() {
        return Err(Error::Config(format!("dataset hr_dir {} does not exist", hr_dir.display())));
    }
    DatasetLayout::open(hr_dir, lr_dir)
}

/// Training and held-out samples of a resolved config.
pub fn load_split(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let hr_dir = cfg.hr_dir.clone().ok_or_else(|| Error::Config("dataset hr_dir is not set".into()))?;
    let layout = open_dataset(&hr_dir, cfg.lr_dir.as_deref())?;
    let mut all: Vec<Sample> = layout.load()?.into_iter().map(|(_, s)| s).collect();
    if cfg.val_count >= all.len() {
        return Err(Error::Config(format!(
            "val_count {} leaves no training images out of {}",
            cfg.val_count,
            all.len()
        )));
    }
    let val = all.split_off(all.len() - cfg.val_count);
    Ok((all, val))
}

/// Degraded patches for quantizer calibration, drawn without augmentation
/// from a stream seeded by the run seed.
pub fn calibration_batch(cfg: &RunConfig, train: &[Sample]) -> Result<Vec<Tensor>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ CALIB_SALT);
    let preset = cfg.preset();
    (0..cfg.calib_patches)
        .map(|k| {
            let smp = &train[k % train.len()];
            Ok(sample_patch(smp, preset.gt_size, cfg.scale(), &cfg.degradation(), false, &mut rng)?.0)
        })
        .collect()
}

/// The network a run starts from: built from the seed, then wrapped with
/// quantizers when the config asks for them. Runs that differ only in
/// bits or quantizer kind share the full-precision initialization and the
/// calibration batch.
pub fn initial_model(cfg: &RunConfig, train: &[Sample]) -> Result<RestorationNet> {
    let net = build_model(&cfg.model_config(), cfg.seed)?;
    match cfg.bits {
        Some([w, a]) if cfg.is_quantized() => quantize_model(&net, w, a, &calibration_batch(cfg, train)?),
        _ => Ok(net),
    }
}

/// Loads the data, builds the starting network and trains it.
pub fn run_training(cfg: &RunConfig) -> Result<TrainOutcome> {
    let cfg = cfg.resolved()?;
    let (train, val) = load_split(&cfg)?;
    let val = prepare_val(&val, &cfg.degradation(), cfg.scale(), VAL_SEED)?;
    let net = initial_model(&cfg, &train)?;
    qat_train(&net, &train, &val, &cfg.train_options())
}

pub fn write_metrics_csv(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "lr", "loss", "psnr_val", "ssim_val"])?;
    for r in log {
        w.write_record([
            r.iter.to_string(),
            format!("{:e}", r.lr),
            format!("{:.9e}", r.loss),
            format_db(r.psnr_val),
            format!("{:.6}", r.ssim_val),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub manifest: PathBuf,
    pub outcome: TrainOutcome,
}

/// Trains and writes the checkpoint, the metrics log and the manifest into
/// the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    let started = unix_now();
    let cfg = cfg.resolved()?;
    let outcome = run_training(&cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let checkpoint = cfg.out_dir.join(CHECKPOINT_FILE);
    let metrics = cfg.out_dir.join(METRICS_FILE);
    let manifest = cfg.out_dir.join(MANIFEST_FILE);
    checkpoint::save(&outcome.net, &checkpoint, false)?;
    write_metrics_csv(&metrics, &outcome.log)?;
    RunManifest {
        version: version_string(),
        seed: cfg.seed,
        started_unix: started,
        finished_unix: unix_now(),
        artifacts: vec![checkpoint.clone(), metrics.clone()],
        config: cfg,
    }
    .save(&manifest)?;
    Ok(TrainArtifacts {
        checkpoint,
        metrics,
        manifest,
        outcome,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub psnr_y: f64,
    pub ssim_y: f64,
}

/// Per-image rows followed by a `mean` row.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean: EvalRow,
}

impl EvalReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["image", "psnr_y", "ssim_y"])?;
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            w.write_record([r.image.clone(), format_db(r.psnr_y), format!("{:.6}", r.ssim_y)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Restores every image of the dataset and scores it on luma. Without an
/// LR folder the inputs are synthesized with the task's degradation.
pub fn cmd_eval(net: &RestorationNet, hr_dir: &Path, lr_dir: Option<&Path>) -> Result<EvalReport> {
    let layout = open_dataset(hr_dir, lr_dir)?;
    let s = net.cfg.scale as usize;
    let spec = default_degradation(net.cfg.task, net.cfg.scale);
    let mut rows = Vec::with_capacity(layout.len());
    for (i, (stem, smp)) in layout.load()?.into_iter().enumerate() {
        let pair = match smp.lq {
            Some(lq) => {
                let gt = mod_crop(&smp.hr, s)?;
                if gt.shape()[1] != lq.shape()[1] * s || gt.shape()[2] != lq.shape()[2] * s {
                    return Err(Error::Dataset(format!(
                        "pair {stem:?}: LR {}×{} at scale {s} does not match HR {}×{}",
                        lq.shape()[1],
                        lq.shape()[2],
                        smp.hr.shape()[1],
                        smp.hr.shape()[2]
                    )));
                }
                ValPair { lq, gt }
            }
            None => prepare_val(std::slice::from_ref(&smp), &spec, net.cfg.scale, VAL_SEED + i as u64)?.remove(0),
        };
        let pred = net.infer(&pair.lq)?;
        let q = quality_y(&pred, &pair.gt, val_border(net))?;
        rows.push(EvalRow {
            image: stem,
            psnr_y: q.psnr_db,
            ssim_y: q.ssim,
        });
    }
    let n = rows.len() as f64;
    let mean = EvalRow {
        image: "mean".into(),
        psnr_y: rows.iter().map(|r| r.psnr_y).sum::<f64>() / n,
        ssim_y: rows.iter().map(|r| r.ssim_y).sum::<f64>() / n,
    };
    Ok(EvalReport { rows, mean })
}

/// Reference LR input size for the operation counts in export reports.
pub const REPORT_INPUT: (usize, usize) = (64, 64);

#[derive(Clone, Debug, PartialEq)]
pub struct ExportReport {
    pub bits: (u32, u32),
    pub file_bytes: usize,
    pub body_weights: usize,
    /// Packed body containers, headers included.
    pub packed_body_bytes: usize,
    /// The same weights stored as 32-bit floats.
    pub fp_body_bytes: usize,
    pub complexity: ComplexityReport,
}

impl fmt::Display for ExportReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.complexity;
        writeln!(f, "bits (w/a): {}/{}", self.bits.0, self.bits.1)?;
        writeln!(f, "file bytes: {}", self.file_bytes)?;
        writeln!(
            f,
            "body: {} weights, {} packed bytes vs {} fp32 bytes ({:.2}%)",
            self.body_weights,
            self.packed_body_bytes,
            self.fp_body_bytes,
            100.0 * self.packed_body_bytes as f64 / self.fp_body_bytes as f64
        )?;
        writeln!(
            f,
            "params: {:.0} -> {:.1} effective (reduction {:.2}%)",
            c.params_full,
            c.params_effective,
            100.0 * c.params_reduction()
        )?;
        write!(
            f,
            "ops @{}x{}: {:.0} -> {:.1} effective MACs (reduction {:.2}%)",
            REPORT_INPUT.0,
            REPORT_INPUT.1,
            c.ops_full,
            c.ops_effective,
            100.0 * c.ops_reduction()
        )
    }
}

/// Freezes the weights onto their grids and writes a checkpoint whose body
/// weights live in packed containers.
pub fn cmd_export(net: &RestorationNet, out: &Path) -> Result<ExportReport> {
    let Some(wb) = net.cfg.weight_bits().filter(|_| !net.weight_quant.is_empty()) else {
        return Err(Error::Config(
            "checkpoint holds a full-precision model; quantize it first (train with --bits W A)".into(),
        ));
    };
    let ab = net.cfg.act_bits().unwrap_or(FULL_PRECISION_BITS);
    let frozen = net.freeze_weights()?;
    let bytes = checkpoint::to_bytes(&frozen, true)?;
    std::fs::write(out, &bytes)?;
    let (mut n, mut packed) = (0, 0);
    for name in frozen.weight_quant.keys() {
        let w = frozen.store.get(name)?;
        n += w.numel();
        packed += pack_weights(w, frozen.store.get(&levels_key(name))?.data(), wb)?.byte_len();
    }
    Ok(ExportReport {
        bits: (wb, ab),
        file_bytes: bytes.len(),
        body_weights: n,
        packed_body_bytes: packed,
        fp_body_bytes: 4 * n,
        complexity: count_complexity(net, REPORT_INPUT.0, REPORT_INPUT.1, (wb, ab)),
    })
}
