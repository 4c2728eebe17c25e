use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Whole-tensor statistics feeding the activation quantizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatsVector {
    pub mu: f64,
    /// Population standard deviation.
    pub sigma: f64,
    pub xmin: f64,
    pub xmax: f64,
}

impl StatsVector {
    pub fn to_array(self) -> [f64; 4] {
        [self.mu, self.sigma, self.xmin, self.xmax]
    }

    /// Same statistics with the mean replaced by its magnitude.
    pub fn abs_mean(self) -> StatsVector {
        StatsVector {
            mu: self.mu.abs(),
            ..self
        }
    }
}

/// Mean accumulated relative to the first element; exact for constant data.
pub(crate) fn shifted_mean(d: &[f64]) -> f64 {
    let x0 = d[0];
    x0 + d.iter().map(|v| v - x0).sum::<f64>() / d.len() as f64
}

/// Returns `(Φ, Φ′)` where `Φ′` carries `|μ|` in place of `μ`.
pub fn compute_stats(x: &Tensor) -> Result<(StatsVector, StatsVector)> {
    let d = x.data();
    if d.is_empty() {
        return Err(Error::Quant("statistics of an empty tensor".into()));
    }
    let n = d.len() as f64;
    let mu = shifted_mean(d);
    let var = d.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let phi = StatsVector {
        mu,
        sigma: var.sqrt(),
        xmin: x.min(),
        xmax: x.max(),
    };
    Ok((phi, phi.abs_mean()))
}
