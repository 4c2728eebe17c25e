//! Run configuration: one flat TOML file, optionally overridden from the
//! command line and by `QSSM_SEED`.

use super::toy::toy_dir;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, QuantizerKind, Task};
use crate::quant::DlsInit;
use crate::train::{default_degradation, DegradationSpec, TrainOptions, TrainPreset, DESK_ITERS, FULL_ITERS};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SEED_ENV: &str = "QSSM_SEED";

/// Everything a run depends on. Unset optional fields fall back to the task
/// presets; [`RunConfig::resolved`] fills them in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: Task,
    pub scale: Option<u32>,
    /// `[weight, activation]` bits; absent means full precision.
    pub bits: Option<[u32; 2]>,
    pub quantizer: QuantizerKind,
    pub dls_init: DlsInit,
    pub desk: bool,
    pub seed: u64,
    pub iters: Option<usize>,
    /// Defaults to the bundled toy images.
    pub hr_dir: Option<PathBuf>,
    pub lr_dir: Option<PathBuf>,
    /// The last `val_count` images (in sorted order) are held out.
    pub val_count: usize,
    pub out_dir: PathBuf,
    pub channels: usize,
    pub state_size: usize,
    pub blocks: Option<usize>,
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
    pub gt_size: Option<usize>,
    pub eval_every: usize,
    /// Patches used to calibrate the quantizers before training.
    pub calib_patches: usize,
    pub augment: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::LightSr,
            scale: None,
            bits: None,
            quantizer: QuantizerKind::Learned,
            dls_init: DlsInit::default(),
            desk: false,
            seed: 0,
            iters: None,
            hr_dir: None,
            lr_dir: None,
            val_count: 2,
            out_dir: PathBuf::from("qssm_out"),
            channels: 16,
            state_size: 4,
            blocks: None,
            batch_size: None,
            base_lr: None,
            gt_size: None,
            eval_every: 100,
            calib_patches: 4,
            augment: true,
        }
    }
}

/// Command-line overrides; `None` keeps the file's value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub task: Option<Task>,
    pub bits: Option<[u32; 2]>,
    pub scale: Option<u32>,
    pub desk: bool,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub hr_dir: Option<PathBuf>,
    pub lr_dir: Option<PathBuf>,
    pub iters: Option<usize>,
}

fn rebase(p: &mut Option<PathBuf>, base: &Path) {
    if let Some(v) = p.as_mut() {
        if v.is_relative() {
            *v = base.join(&*v);
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Reads a config file, or the config snapshot inside a run manifest.
    /// Relative paths are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = match table.get("config") {
            Some(toml::Value::Table(inner)) => {
                Self::from_toml(&toml::to_string(inner).expect("table serializes"))?
            }
            _ => Self::from_toml(&text)?,
        };
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(&mut cfg.hr_dir, base);
        rebase(&mut cfg.lr_dir, base);
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    /// Applies `QSSM_SEED` (if set) and then the command-line overrides.
    pub fn apply(mut self, o: &Overrides, env_seed: Option<&str>) -> Result<Self> {
        if let Some(s) = env_seed {
            self.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {s:?}")))?;
        }
        if let Some(t) = o.task {
            if t != self.task {
                self.scale = None;
                self.blocks = None;
            }
            self.task = t;
        }
        if o.bits.is_some() {
            self.bits = o.bits;
        }
        if o.scale.is_some() {
            self.scale = o.scale;
        }
        self.desk |= o.desk;
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out_dir = p.clone();
        }
        if o.hr_dir.is_some() {
            self.hr_dir = o.hr_dir.clone();
        }
        if o.lr_dir.is_some() {
            self.lr_dir = o.lr_dir.clone();
        }
        if o.iters.is_some() {
            self.iters = o.iters;
        }
        Ok(self)
    }

    /// Fills every optional field from the presets and validates the
    /// result.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        let preset = self.preset_base();
        c.scale = Some(self.scale.unwrap_or(self.task.default_scale()));
        c.blocks = Some(self.blocks.unwrap_or(preset.blocks));
        c.batch_size = Some(self.batch_size.unwrap_or(preset.batch_size));
        c.base_lr = Some(self.base_lr.unwrap_or(preset.base_lr));
        c.gt_size = Some(self.gt_size.unwrap_or(preset.gt_size));
        c.iters = Some(self.iters.unwrap_or(if self.desk { DESK_ITERS } else { FULL_ITERS }));
        c.hr_dir = Some(self.hr_dir.clone().unwrap_or_else(toy_dir));
        let mut m = c.model_config();
        m.bits = c.bits.map(|[w, a]| (w, a));
        m.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if c.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if c.bits.is_some_and(|[w, a]| w != 32 || a != 32) && c.calib_patches == 0 {
            return bad("calib_patches must be positive for a quantized run");
        }
        if c.batch_size == Some(0) || !c.base_lr.is_some_and(|v| v > 0.0 && v.is_finite()) {
            return bad("batch_size and base_lr must be positive");
        }
        if c.gt_size.unwrap() % c.scale.unwrap() as usize != 0 {
            return Err(Error::Config(format!(
                "gt_size {} is not divisible by scale {}",
                c.gt_size.unwrap(),
                c.scale.unwrap()
            )));
        }
        Ok(c)
    }

    fn preset_base(&self) -> TrainPreset {
        let p = TrainPreset::for_task(self.task);
        if self.desk {
            p.desk()
        } else {
            p
        }
    }

    pub fn scale(&self) -> u32 {
        self.scale.unwrap_or(self.task.default_scale())
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig::new(self.task);
        m.scale = self.scale();
        m.blocks = self.blocks.unwrap_or(self.preset_base().blocks);
        m.channels = self.channels;
        m.state_size = self.state_size;
        m.quantizer = self.quantizer;
        m.dls_init = self.dls_init;
        m
    }

    pub fn preset(&self) -> TrainPreset {
        let mut p = self.preset_base();
        if let Some(b) = self.blocks {
            p.blocks = b;
        }
        if let Some(b) = self.batch_size {
            p.batch_size = b;
        }
        if let Some(v) = self.base_lr {
            p.base_lr = v;
        }
        if let Some(g) = self.gt_size {
            p.gt_size = g;
        }
        p
    }

    pub fn degradation(&self) -> DegradationSpec {
        default_degradation(self.task, self.scale())
    }

    pub fn train_options(&self) -> TrainOptions {
        let iters = self.iters.unwrap_or(if self.desk { DESK_ITERS } else { FULL_ITERS });
        let mut o = TrainOptions::new(self.preset(), self.degradation(), iters, self.seed);
        o.eval_every = self.eval_every;
        o.augment = self.augment;
        o
    }

    pub fn is_quantized(&self) -> bool {
        self.bits.is_some_and(|[w, a]| w != 32 || a != 32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_from_presets() {
        let c = RunConfig {
            desk: true,
            ..Default::default()
        }
        .resolved()
        .unwrap();
        assert_eq!(c.scale, Some(2));
        assert_eq!(c.blocks, Some(4));
        assert_eq!(c.batch_size, Some(2));
        assert_eq!(c.base_lr, Some(2e-4));
        assert_eq!(c.gt_size, Some(64));
        assert_eq!(c.iters, Some(2000));
        assert_eq!(c.train_options().preset.milestones, vec![1000, 1500, 1750, 1875]);
        assert_eq!(c.hr_dir, Some(toy_dir()));
    }

    #[test]
    fn toml_roundtrip_and_unknown_keys() {
        let c = RunConfig::from_toml("task = \"denoise\"\nbits = [4, 4]\nseed = 7\n").unwrap();
        assert_eq!((c.task, c.bits, c.seed), (Task::Denoise, Some([4, 4]), 7));
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        let r = c.resolved().unwrap();
        assert_eq!(RunConfig::from_toml(&r.to_toml()).unwrap(), r);
        assert!(matches!(RunConfig::from_toml("colour = 3"), Err(Error::Config(_))));
    }

    #[test]
    fn override_precedence() {
        let base = RunConfig {
            seed: 1,
            ..Default::default()
        };
        let c = base.clone().apply(&Overrides::default(), Some("5")).unwrap();
        assert_eq!(c.seed, 5);
        let o = Overrides {
            seed: Some(9),
            task: Some(Task::Denoise),
            bits: Some([2, 2]),
            ..Default::default()
        };
        let c = base.clone().apply(&o, Some("5")).unwrap();
        assert_eq!((c.seed, c.task, c.scale(), c.bits), (9, Task::Denoise, 1, Some([2, 2])));
        assert!(base.apply(&Overrides::default(), Some("x")).is_err());
    }

    #[test]
    fn invalid_combinations() {
        let c = RunConfig {
            task: Task::Denoise,
            scale: Some(2),
            ..Default::default()
        };
        assert!(c.resolved().is_err());
        let c = RunConfig {
            bits: Some([3, 4]),
            ..Default::default()
        };
        assert!(c.resolved().is_err());
        let c = RunConfig {
            scale: Some(3),
            gt_size: Some(64),
            ..Default::default()
        };
        assert!(c.resolved().is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let t = tempfile::tempdir().unwrap();
        let p = t.path().join("run.toml");
        std::fs::write(&p, "hr_dir = \"imgs/hr\"\nout_dir = \"out\"\n").unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.hr_dir, Some(t.path().join("imgs/hr")));
        assert_eq!(c.out_dir, t.path().join("out"));
    }
}
