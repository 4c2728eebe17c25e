use crate::error::{Error, Result};
use crate::quant::{DlsInit, SUPPORTED_BITS};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Bit-width that stands for "not quantized".
pub const FULL_PRECISION_BITS: u32 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ClassicSr,
    LightSr,
    Denoise,
    JpegCar,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::ClassicSr, Task::LightSr, Task::Denoise, Task::JpegCar];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::ClassicSr => "classic_sr",
            Task::LightSr => "light_sr",
            Task::Denoise => "denoise",
            Task::JpegCar => "jpeg_car",
        }
    }

    pub fn is_sr(self) -> bool {
        matches!(self, Task::ClassicSr | Task::LightSr)
    }

    pub fn default_blocks(self) -> usize {
        match self {
            Task::LightSr => 4,
            _ => 6,
        }
    }

    pub fn default_scale(self) -> u32 {
        if self.is_sr() {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown task {s:?}")))
    }
}

/// Which quantizer family wraps weights and activations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerKind {
    /// Learnable thresholds on weights, statistics-driven learnable scalars
    /// on activations.
    #[default]
    Learned,
    /// Min-max calibrated uniform quantizers with a straight-through
    /// backward.
    Static,
}

/// Activation-site kinds, relative to their block. Every block has all of
/// them except `body_end_in`, which sits once before the body-end
/// convolution.
pub const SITE_KINDS: [&str; 7] = [
    "ln1_out",
    "ss2d.in_proj_out",
    "ss2d.scan_in",
    "ss2d.out_proj_in",
    "ln2_out",
    "cab.mid",
    "body_end_in",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub task: Task,
    pub scale: u32,
    pub blocks: usize,
    pub channels: usize,
    pub state_size: usize,
    /// `(w_bits, a_bits)`; `None` or `32` on a side means full precision.
    pub bits: Option<(u32, u32)>,
    #[serde(default)]
    pub quantizer: QuantizerKind,
    #[serde(default)]
    pub dls_init: DlsInit,
    #[serde(default = "default_sites")]
    pub act_sites: Vec<String>,
    #[serde(default = "default_rho")]
    pub rfa_rho: f64,
    #[serde(default = "default_slope")]
    pub rfa_fixed_slope: f64,
}

fn default_rho() -> f64 {
    crate::quant::rfa::DEFAULT_RHO
}

fn default_slope() -> f64 {
    crate::quant::rfa::DEFAULT_FIXED_SLOPE
}

fn default_sites() -> Vec<String> {
    SITE_KINDS.iter().map(|s| s.to_string()).collect()
}

impl ModelConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            scale: task.default_scale(),
            blocks: task.default_blocks(),
            channels: 16,
            state_size: 4,
            bits: None,
            quantizer: QuantizerKind::Learned,
            dls_init: DlsInit::default(),
            act_sites: default_sites(),
            rfa_rho: default_rho(),
            rfa_fixed_slope: default_slope(),
        }
    }

    pub fn with_bits(mut self, w: u32, a: u32) -> Self {
        self.bits = Some((w, a));
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.task.is_sr() {
            if !(2..=4).contains(&self.scale) {
                return bad(format!("{} needs scale 2, 3 or 4, got {}", self.task, self.scale));
            }
        } else if self.scale != 1 {
            return bad(format!("{} requires scale 1, got {}", self.task, self.scale));
        }
        if self.blocks == 0 || self.channels == 0 || self.state_size == 0 {
            return bad("blocks, channels and state_size must be positive".into());
        }
        if self.channels % crate::ssm::block::CAB_REDUCTION != 0 {
            return bad(format!(
                "channels ({}) must be divisible by {}",
                self.channels,
                crate::ssm::block::CAB_REDUCTION
            ));
        }
        if let Some((w, a)) = self.bits {
            for b in [w, a] {
                if b != FULL_PRECISION_BITS && !SUPPORTED_BITS.contains(&b) {
                    return bad(format!("unsupported bit-width {b}; expected 2, 4, 8 or 32"));
                }
            }
        }
        if !(0.0..0.5).contains(&self.rfa_rho) || !(self.rfa_fixed_slope >= 0.0) {
            return bad("rfa_rho must lie in [0, 0.5) and rfa_fixed_slope must be non-negative".into());
        }
        for s in &self.act_sites {
            if !SITE_KINDS.contains(&s.as_str()) {
                return bad(format!("unknown activation site kind {s:?}; known: {SITE_KINDS:?}"));
            }
        }
        Ok(())
    }

    /// Weight bits, or `None` at full precision.
    pub fn weight_bits(&self) -> Option<u32> {
        self.bits.map(|b| b.0).filter(|&b| b != FULL_PRECISION_BITS)
    }

    pub fn act_bits(&self) -> Option<u32> {
        self.bits.map(|b| b.1).filter(|&b| b != FULL_PRECISION_BITS)
    }

    pub fn is_full_precision(&self) -> bool {
        self.weight_bits().is_none() && self.act_bits().is_none()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_per_task() {
        assert_eq!(ModelConfig::new(Task::LightSr).blocks, 4);
        assert_eq!(ModelConfig::new(Task::ClassicSr).blocks, 6);
        assert_eq!(ModelConfig::new(Task::Denoise).scale, 1);
        for t in Task::ALL {
            ModelConfig::new(t).validate().unwrap();
        }
    }

    #[test]
    fn sr_with_scale_one_rejected() {
        let mut c = ModelConfig::new(Task::ClassicSr);
        c.scale = 1;
        assert!(c.validate().is_err());
        let mut d = ModelConfig::new(Task::JpegCar);
        d.scale = 2;
        assert!(d.validate().is_err());
    }

    #[test]
    fn bits_checked() {
        assert!(ModelConfig::new(Task::LightSr).with_bits(3, 4).validate().is_err());
        assert!(ModelConfig::new(Task::LightSr).with_bits(32, 32).is_full_precision());
        assert!(!ModelConfig::new(Task::LightSr).with_bits(2, 2).is_full_precision());
    }

    #[test]
    fn toml_round_trip() {
        let c = ModelConfig::new(Task::JpegCar).with_bits(4, 8);
        assert_eq!(ModelConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
