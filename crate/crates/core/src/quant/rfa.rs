//! Weight quantizer with learnable interval thresholds.
//!
//! Levels `q_1 < … < q_N` sit on a uniform grid and never move during
//! training. Thresholds `T_1 < … < T_N` decide which level a weight maps to:
//! `w ∈ [T_i, T_{i+1})` gives `q_i`, everything below `T_1` gives `q_1` and
//! everything from `T_N` up gives `q_N`. `T_1` is therefore an outer
//! sentinel; the level jumps happen at `T_2 … T_N`.
//!
//! The backward pass is piecewise linear. Within `rho` of an interval width
//! from a jump threshold the slope is `Δq / width`; everywhere else it is
//! the fixed slope. Thresholds receive `-slope × upstream` from the weights
//! inside their transition zone.

use super::uniform::check_bits;
use crate::autograd::{BackwardFn, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_FIXED_SLOPE: f64 = 0.1;
pub const DEFAULT_RHO: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct RfaParams {
    pub levels: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub fixed_slope: f64,
    /// Transition-zone half-width as a fraction of the interval width.
    pub rho: f64,
}

/// `N = 2^bits` evenly spaced levels with `q_1 = w_min` and `q_N = w_max`.
pub fn rfa_levels(bits: u32, w_min: f64, w_max: f64) -> Result<Vec<f64>> {
    if !(w_min < w_max) {
        return Err(Error::Quant(format!("empty level range [{w_min}, {w_max}]")));
    }
    let n = 1usize << bits;
    let step = (w_max - w_min) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| if i == n - 1 { w_max } else { w_min + step * i as f64 })
        .collect())
}

/// Levels spanning the tensor's range, thresholds at level midpoints and
/// the outer sentinel half a step below `q_1`.
pub fn init_rfa(w: &Tensor, bits: u32) -> Result<RfaParams> {
    check_bits(bits)?;
    let (lo, hi) = (w.min(), w.max());
    if !(lo < hi) {
        return Err(Error::Quant("cannot build levels for a constant tensor".into()));
    }
    let levels = rfa_levels(bits, lo, hi)?;
    let step = levels[1] - levels[0];
    let mut thresholds = Vec::with_capacity(levels.len());
    thresholds.push(levels[0] - step / 2.0);
    thresholds.extend(levels.windows(2).map(|p| (p[0] + p[1]) / 2.0));
    RfaParams::new(levels, thresholds, DEFAULT_FIXED_SLOPE, DEFAULT_RHO)
}

/// Which side-zone a weight falls into, if any.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slope {
    pub value: f64,
    /// Index of the threshold whose transition zone contains the weight.
    pub zone: Option<usize>,
}

impl RfaParams {
    pub fn new(levels: Vec<f64>, thresholds: Vec<f64>, fixed_slope: f64, rho: f64) -> Result<Self> {
        if levels.len() < 2 || levels.len() != thresholds.len() {
            return Err(Error::Quant(format!(
                "need matching level/threshold counts >= 2, got {} and {}",
                levels.len(),
                thresholds.len()
            )));
        }
        let step = levels[1] - levels[0];
        if !(step > 0.0) {
            return Err(Error::Quant("levels must be strictly increasing".into()));
        }
        for p in levels.windows(2) {
            if ((p[1] - p[0]) - step).abs() > 1e-9 * step.max(1.0) {
                return Err(Error::Quant("levels must be uniformly spaced".into()));
            }
        }
        if !(0.0..0.5).contains(&rho) {
            return Err(Error::Quant(format!("transition half-width {rho} outside [0, 0.5)")));
        }
        let p = Self {
            levels,
            thresholds,
            fixed_slope,
            rho,
        };
        p.check_thresholds()?;
        Ok(p)
    }

    pub fn check_thresholds(&self) -> Result<()> {
        if self.thresholds.windows(2).all(|p| p[0] < p[1]) {
            Ok(())
        } else {
            Err(Error::Quant("thresholds must be strictly increasing".into()))
        }
    }

    pub fn step(&self) -> f64 {
        self.levels[1] - self.levels[0]
    }

    pub fn bits(&self) -> u32 {
        self.levels.len().trailing_zeros()
    }

    /// Interval index of `w`: the largest `i` with `T_i <= w`, or 0 below
    /// `T_1`.
    #[inline]
    pub fn interval(&self, w: f64) -> usize {
        self.thresholds.partition_point(|&t| t <= w).saturating_sub(1)
    }

    #[inline]
    pub fn quantize(&self, w: f64) -> f64 {
        self.levels[self.interval(w)]
    }

    /// Width of interval `k`; the unbounded top interval mirrors its
    /// neighbour.
    fn width(&self, k: usize) -> f64 {
        let n = self.thresholds.len();
        if k + 1 < n {
            self.thresholds[k + 1] - self.thresholds[k]
        } else {
            self.thresholds[n - 1] - self.thresholds[n - 2]
        }
    }

    /// Surrogate derivative of the forward map at `w`.
    pub fn slope(&self, w: f64) -> Slope {
        let fixed = Slope {
            value: self.fixed_slope,
            zone: None,
        };
        let t = &self.thresholds;
        if w < t[0] {
            return fixed;
        }
        let k = self.interval(w);
        let d = self.width(k);
        let zone_w = self.rho * d;
        let adaptive = self.step() / d;
        if k >= 1 && w - t[k] < zone_w {
            return Slope {
                value: adaptive,
                zone: Some(k),
            };
        }
        if k + 1 < t.len() && t[k + 1] - w < zone_w {
            return Slope {
                value: adaptive,
                zone: Some(k + 1),
            };
        }
        fixed
    }

    /// Restores strict ordering after an optimizer step, keeping a minimum
    /// gap of `1e-6 · Δq` between neighbours.
    pub fn project_thresholds(thresholds: &mut [f64], step: f64) {
        let gap = 1e-6 * step;
        for i in 1..thresholds.len() {
            if thresholds[i] < thresholds[i - 1] + gap {
                thresholds[i] = thresholds[i - 1] + gap;
            }
        }
    }
}

pub fn rfa_forward(w: &Tensor, p: &RfaParams) -> Result<Tensor> {
    p.check_thresholds()?;
    Ok(w.map(|v| p.quantize(v)))
}

/// Surrogate gradients `(g_w, g_T)` for upstream gradient `g_up`.
pub fn rfa_backward(w: &Tensor, p: &RfaParams, g_up: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    if w.shape() != g_up.shape() {
        return Err(Error::ShapeMismatch {
            op: "rfa_backward",
            lhs: w.shape().to_vec(),
            rhs: g_up.shape().to_vec(),
        });
    }
    let mut g_t = vec![0.0; p.thresholds.len()];
    let g_w = w
        .data()
        .iter()
        .zip(g_up.data())
        .map(|(&v, &g)| {
            let s = p.slope(v);
            if let Some(z) = s.zone {
                g_t[z] -= s.value * g;
            }
            g * s.value
        })
        .collect();
    Ok((Tensor::from_parts(w.shape().to_vec(), g_w), g_t))
}

/// Tape op: quantizes weight `w` with thresholds `thresholds` (a tape value
/// so that they learn); levels, slope and `rho` come from `cfg`.
pub fn rfa_quantize_var(tape: &mut Tape, w: Var, thresholds: Var, cfg: &RfaParams) -> Result<Var> {
    let mut p = cfg.clone();
    p.thresholds = tape.value(thresholds).data().to_vec();
    p.check_thresholds()?;
    let out = rfa_forward(tape.value(w), &p)?;
    let bw: BackwardFn = Box::new(move |inp: &[&Tensor], _: &Tensor, g: &Tensor| {
        let (gw, gt) = rfa_backward(inp[0], &p, g)?;
        Ok(vec![Some(gw), Some(Tensor::from_vec(gt))])
    });
    tape.push("rfa", out, &[w, thresholds], bw)
}
