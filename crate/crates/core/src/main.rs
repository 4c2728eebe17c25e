use clap::{Args, Parser, Subcommand};
use qssm::cli_io::{self, exit_code, load_png, DatasetLayout, Overrides, RunConfig, SEED_ENV};
use qssm::model::{checkpoint, Task};
use qssm::train::{default_degradation, degrade};
use qssm::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Quantization-aware training and evaluation of state-space restoration
/// networks.
#[derive(Parser, Debug)]
#[command(name = "qssm", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoint, metrics CSV and manifest.
    Train(Common),
    /// Score a checkpoint on a dataset (PSNR/SSIM on luma).
    Eval(Common),
    /// Pack a quantized checkpoint and report its size and complexity.
    Export(Common),
    /// Dump activation histograms and statistics for selected sites.
    Stats(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (TOML), or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    /// Weight and activation bit-widths.
    #[arg(long, num_args = 2, value_names = ["W", "A"])]
    bits: Option<Vec<u32>>,
    #[arg(long)]
    scale: Option<u32>,
    /// Desk-scale schedule and patch size.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (train, stats) or file (eval CSV, export).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    hr_dir: Option<PathBuf>,
    #[arg(long)]
    lr_dir: Option<PathBuf>,
    /// Checkpoint to evaluate, export or inspect.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Activation-site selector for `stats`.
    #[arg(long, default_value = "all")]
    layer: String,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let o = Overrides {
            task: self.task,
            bits: self.bits.as_ref().map(|b| [b[0], b[1]]),
            scale: self.scale,
            desk: self.desk,
            seed: self.seed,
            out: self.out.clone(),
            hr_dir: self.hr_dir.clone(),
            lr_dir: self.lr_dir.clone(),
            iters: self.iters,
        };
        base.apply(&o, std::env::var(SEED_ENV).ok().as_deref())?.resolved()
    }

    fn checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config("--checkpoint is required".into()))
    }
}

fn train(a: &Common) -> Result<()> {
    let cfg = a.run_config()?;
    let art = cli_io::cmd_train(&cfg)?;
    if let Some(last) = art.outcome.log.last() {
        println!(
            "iter {}: loss {:.6} val psnr {} ssim {:.4}",
            last.iter,
            last.loss,
            qssm::metrics::format_db(last.psnr_val),
            last.ssim_val
        );
    }
    for p in [&art.checkpoint, &art.metrics, &art.manifest] {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn eval(a: &Common) -> Result<()> {
    let cfg = a.run_config()?;
    let net = checkpoint::load(a.checkpoint()?)?;
    let hr = cfg.hr_dir.clone().expect("resolved");
    let report = cli_io::cmd_eval(&net, &hr, cfg.lr_dir.as_deref())?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("eval.csv"));
    report.write_csv(&out)?;
    for r in report.rows.iter().chain(std::iter::once(&report.mean)) {
        println!("{}\t{}\t{:.4}", r.image, qssm::metrics::format_db(r.psnr_y), r.ssim_y);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn export(a: &Common) -> Result<()> {
    let net = checkpoint::load(a.checkpoint()?)?;
    let out = a.out.clone().ok_or_else(|| Error::Config("--out is required for export".into()))?;
    let report = cli_io::cmd_export(&net, &out)?;
    println!("{report}");
    println!("wrote {}", out.display());
    Ok(())
}

fn stats(a: &Common) -> Result<()> {
    let cfg = a.run_config()?;
    let net = checkpoint::load(a.checkpoint()?)?;
    let hr = cfg.hr_dir.clone().expect("resolved");
    let layout = DatasetLayout::open(&hr, cfg.lr_dir.as_deref())?;
    let spec = default_degradation(net.cfg.task, net.cfg.scale);
    let mut images = Vec::with_capacity(layout.len());
    for (i, e) in layout.entries.iter().enumerate() {
        let lq = match &e.lr {
            Some(p) => load_png(p)?,
            None => {
                let hr = qssm::train::mod_crop(&load_png(&e.hr)?, net.cfg.scale as usize)?;
                degrade(&hr, &spec, i as u64)?
            }
        };
        images.push((e.stem.clone(), lq));
    }
    let dump = cli_io::collect_stats(&net, &images, &a.layer, None)?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("stats"));
    dump.write(&out)?;
    println!(
        "{} histogram rows, {} statistics rows written to {}",
        dump.histograms.len(),
        dump.phi.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export(a),
        Command::Stats(a) => stats(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
