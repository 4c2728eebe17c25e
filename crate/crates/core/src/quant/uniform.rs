use crate::autograd::{BackwardFn, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bit-widths supported by the quantizers.
pub const SUPPORTED_BITS: [u32; 3] = [2, 4, 8];

pub fn check_bits(bits: u32) -> Result<()> {
    if SUPPORTED_BITS.contains(&bits) {
        Ok(())
    } else {
        Err(Error::Quant(format!("unsupported bit-width {bits}, expected 2, 4 or 8")))
    }
}

/// Signed integer range `[-2^(n-1), 2^(n-1) - 1]`.
pub fn int_range(bits: u32) -> (f64, f64) {
    let half = (1u64 << (bits - 1)) as f64;
    (-half, half - 1.0)
}

/// Saturates `x` to the signed `bits`-bit integer range.
pub fn clip_int(x: f64, bits: u32) -> f64 {
    let (lo, hi) = int_range(bits);
    x.min(hi).max(lo)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformQuantConfig {
    pub bits: u32,
    /// Multiplies the shifted input; the grid spacing is `1 / alpha`.
    pub alpha: f64,
    pub beta: f64,
}

impl UniformQuantConfig {
    pub fn new(bits: u32, alpha: f64, beta: f64) -> Result<Self> {
        check_bits(bits)?;
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Quant(format!("scale must be positive, got {alpha}")));
        }
        Ok(Self { bits, alpha, beta })
    }

    /// Config whose representable range covers `[lo, hi]` symmetrically
    /// about its midpoint.
    pub fn from_range(bits: u32, lo: f64, hi: f64) -> Result<Self> {
        let half = (hi - lo) / 2.0;
        if !(half > 0.0) {
            return Err(Error::Quant(format!("empty range [{lo}, {hi}]")));
        }
        Self::new(bits, int_range(bits).1 / half, (hi + lo) / 2.0)
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        quantize_scalar(x, self.alpha, self.beta, self.bits)
    }
}

/// Distance below an integer at which the floor still returns that integer.
/// A grid value `k/α + β` maps back to `k ± O(ε)`, and without this
/// re-quantizing it could drop a step.
const GRID_SNAP: f64 = 1e-9;

#[inline]
fn snapped_floor(u: f64) -> f64 {
    (u + GRID_SNAP).floor()
}

#[inline]
pub(crate) fn quantize_scalar(x: f64, alpha: f64, beta: f64, bits: u32) -> f64 {
    snapped_floor(clip_int((x - beta) * alpha, bits)) / alpha + beta
}

/// `floor(clip((x - beta) * alpha)) / alpha + beta`, elementwise.
pub fn quantize_uniform(x: &Tensor, cfg: &UniformQuantConfig) -> Result<Tensor> {
    if !(cfg.alpha > 0.0) {
        return Err(Error::Quant(format!("scale must be positive, got {}", cfg.alpha)));
    }
    Ok(x.map(|v| cfg.apply(v)))
}

/// Fake-quantizes `x` with scalar tape values `alpha` and `beta`.
///
/// Backward: the floor is straight-through and elements saturated by the
/// clip get no gradient through the rounding path. Gradients reach
/// `alpha` and `beta` through the surrounding scale/shift arithmetic.
pub fn fake_quant(tape: &mut Tape, x: Var, alpha: Var, beta: Var, bits: u32) -> Result<Var> {
    let a = tape.value(alpha).item();
    let b = tape.value(beta).item();
    if !(a > 0.0) {
        return Err(Error::Quant(format!("scale must be positive, got {a}")));
    }
    let out = tape.value(x).map(|v| quantize_scalar(v, a, b, bits));
    let (lo, hi) = int_range(bits);
    let bw: BackwardFn = Box::new(move |inp: &[&Tensor], _: &Tensor, g: &Tensor| {
        let xd = inp[0].data();
        let mut gx = vec![0.0; xd.len()];
        let (mut ga, mut gb) = (0.0, 0.0);
        for ((gxv, &xv), &gv) in gx.iter_mut().zip(xd).zip(g.data()) {
            let u = (xv - b) * a;
            let inside = u >= lo && u <= hi;
            let f = snapped_floor(u.clamp(lo, hi));
            if inside {
                *gxv = gv;
                ga += gv * ((xv - b) / a - f / (a * a));
            } else {
                gb += gv;
                ga -= gv * f / (a * a);
            }
        }
        Ok(vec![
            Some(Tensor::from_parts(inp[0].shape().to_vec(), gx)),
            Some(Tensor::full(inp[1].shape(), ga)),
            Some(Tensor::full(inp[2].shape(), gb)),
        ])
    });
    tape.push("fake_quant", out, &[x, alpha, beta], bw)
}
