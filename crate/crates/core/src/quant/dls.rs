//! Input-adaptive activation quantizer.
//!
//! The scale and shift are linear functions of the activation's own
//! statistics: `alpha = |w1 · Φ′(x)|`, `beta = w2 · Φ(x)`, with
//! `Φ = (μ, σ, min, max)` and `Φ′ = (|μ|, σ, min, max)`. Eight learnable
//! numbers in total; the resulting `(alpha, beta)` feed the uniform
//! quantizer of [`super::uniform`].

use super::stats::{compute_stats, StatsVector};
use super::uniform::{check_bits, fake_quant, int_range, quantize_uniform, UniformQuantConfig};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DlsParams {
    pub w1: [f64; 4],
    pub w2: [f64; 4],
}

/// Initial range/centre choices. The first half of the name picks the
/// clipping half-range, the second the centre.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DlsInit {
    /// half-range `|μ| + 3σ`, centre `μ`
    #[default]
    Mu3SigmaMu,
    /// half-range `(max - min) / 2`, centre `(max + min) / 2`
    MinmaxMid,
    /// half-range `|μ| + 3σ`, centre `(max + min) / 2`
    Mu3SigmaMid,
    /// half-range `(max - min) / 2`, centre `μ`
    MinmaxMu,
}

impl DlsInit {
    pub const ALL: [DlsInit; 4] = [
        DlsInit::Mu3SigmaMu,
        DlsInit::Mu3SigmaMid,
        DlsInit::MinmaxMu,
        DlsInit::MinmaxMid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DlsInit::Mu3SigmaMu => "mu3sigma_mu",
            DlsInit::MinmaxMid => "minmax_mid",
            DlsInit::Mu3SigmaMid => "mu3sigma_mid",
            DlsInit::MinmaxMu => "minmax_mu",
        }
    }
}

impl fmt::Display for DlsInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DlsInit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DlsInit::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown DLS init strategy {s:?}")))
    }
}

/// `(alpha, beta)` for the given statistics.
pub fn dls_scale_shift(phi: &StatsVector, phi_prime: &StatsVector, p: &DlsParams) -> (f64, f64) {
    let dot = |w: &[f64; 4], s: [f64; 4]| w.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
    (dot(&p.w1, phi_prime.to_array()).abs(), dot(&p.w2, phi.to_array()))
}

/// Quantizes a plain tensor with statistics taken from the tensor itself.
pub fn dls_quantize(x: &Tensor, p: &DlsParams, bits: u32) -> Result<Tensor> {
    check_bits(bits)?;
    let (phi, phi_p) = compute_stats(x)?;
    let (alpha, beta) = dls_scale_shift(&phi, &phi_p, p);
    if !(alpha > 0.0) {
        return Err(Error::Quant("DLS scale collapsed to zero".into()));
    }
    quantize_uniform(x, &UniformQuantConfig::new(bits, alpha, beta)?)
}

/// Tape version of [`dls_quantize`]; `w1` and `w2` are 4-vectors on the
/// tape, so gradients reach them and, through the statistics, `x`.
pub fn dls_quantize_var(tape: &mut Tape, x: Var, w1: Var, w2: Var, bits: u32) -> Result<Var> {
    let phi_p = tape.stats(x, true)?;
    let phi = tape.stats(x, false)?;
    let a = tape.dot(w1, phi_p)?;
    let alpha = tape.abs(a)?;
    let beta = tape.dot(w2, phi)?;
    if !(tape.value(alpha).item() > 0.0) {
        return Err(Error::Quant("DLS scale collapsed to zero".into()));
    }
    fake_quant(tape, x, alpha, beta, bits)
}

/// Initializes the projection so that on `sample` the quantizer clips at
/// `centre ± r` for the half-range `r` chosen by `strategy`.
///
/// The scale weights are a multiple `c` of the feature selector for `r`,
/// with `c = (2^(n-1) - 1) / r²` so that `alpha = (2^(n-1) - 1) / r` on the
/// sample. When `|μ| + 3σ` is zero the min/max half-range is used instead.
pub fn init_dls(sample: &Tensor, bits: u32, strategy: DlsInit) -> Result<DlsParams> {
    check_bits(bits)?;
    let (phi, phi_p) = compute_stats(sample)?;
    let qmax = int_range(bits).1;
    let sigma_sel = [1.0, 3.0, 0.0, 0.0];
    let minmax_sel = [0.0, 0.0, -0.5, 0.5];
    let r_sigma = phi_p.mu + 3.0 * phi_p.sigma;
    let r_minmax = (phi.xmax - phi.xmin) / 2.0;

    let use_sigma = matches!(strategy, DlsInit::Mu3SigmaMu | DlsInit::Mu3SigmaMid);
    let (sel, r) = if use_sigma && r_sigma > 0.0 {
        (sigma_sel, r_sigma)
    } else if r_minmax > 0.0 {
        (minmax_sel, r_minmax)
    } else {
        return Err(Error::DegenerateRange {
            site: "calibration sample".into(),
            reason: "both |mu|+3sigma and (max-min)/2 are zero".into(),
        });
    };
    let c = qmax / (r * r);
    let w1 = sel.map(|s| s * c);
    let w2 = match strategy {
        DlsInit::Mu3SigmaMu | DlsInit::MinmaxMu => [1.0, 0.0, 0.0, 0.0],
        DlsInit::MinmaxMid | DlsInit::Mu3SigmaMid => [0.0, 0.0, 0.5, 0.5],
    };
    Ok(DlsParams { w1, w2 })
}
