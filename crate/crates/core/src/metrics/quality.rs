use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// BT.601 studio-swing luma of an RGB image in `[0, 1]`.
pub fn rgb_to_y(img: &Tensor) -> Result<Tensor> {
    let &[3, h, w] = img.shape() else {
        return Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: "rgb_to_y expects 3×H×W".into(),
        });
    };
    if let Some(v) = img.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: format!("RGB values must lie in [0, 1], found {v}"),
        });
    }
    let n = h * w;
    let d = img.data();
    let y = (0..n)
        .map(|i| (16.0 + 65.481 * d[i] + 128.553 * d[n + i] + 24.966 * d[2 * n + i]) / 255.0)
        .collect();
    Tensor::new(vec![h, w], y)
}

/// Crops `border` pixels from each side of the last two axes.
pub fn crop_border(x: &Tensor, border: usize) -> Result<Tensor> {
    if border == 0 {
        return Ok(x.clone());
    }
    let r = x.rank();
    if r < 2 {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "cropping needs at least two axes".into(),
        });
    }
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    if h <= 2 * border || w <= 2 * border {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: format!("crop of {border} leaves no pixels"),
        });
    }
    let lead: usize = x.shape()[..r - 2].iter().product();
    let (nh, nw) = (h - 2 * border, w - 2 * border);
    let mut out = Vec::with_capacity(lead * nh * nw);
    for c in 0..lead {
        for y in border..h - border {
            let row = (c * h + y) * w;
            out.extend_from_slice(&x.data()[row + border..row + w - border]);
        }
    }
    let mut shape = x.shape()[..r - 2].to_vec();
    shape.extend([nh, nw]);
    Tensor::new(shape, out)
}

fn same_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `10·log₁₀(1/MSE)` for signals in `[0, 1]`; `f64::INFINITY` when equal.
pub fn psnr(a: &Tensor, b: &Tensor, border: usize) -> Result<f64> {
    same_shape(a, b, "psnr")?;
    let (a, b) = (crop_border(a, border)?, crop_border(b, border)?);
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.numel() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable valid-mode filtering of an `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            tmp[y * ow + x0] = (0..k).map(|i| g[i] * x[y * w + x0 + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..k).map(|i| g[i] * tmp[(y0 + i) * ow + x0]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM of two `H×W` planes with dynamic range 1.
pub fn ssim(a: &Tensor, b: &Tensor, border: usize) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let (a, b) = (crop_border(a, border)?, crop_border(b, border)?);
    let &[h, w] = a.shape() else {
        return Err(Error::InvalidShape {
            shape: a.shape().to_vec(),
            reason: "ssim expects an H×W plane".into(),
        });
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidShape {
            shape: vec![h, w],
            reason: format!("ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW} after cropping"),
        });
    }
    let g = gaussian_window();
    let (x, y) = (a.data(), b.data());
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mu_x = filter_valid(x, h, w, &g);
    let mu_y = filter_valid(y, h, w, &g);
    let xx = filter_valid(&prod(x, x), h, w, &g);
    let yy = filter_valid(&prod(y, y), h, w, &g);
    let xy = filter_valid(&prod(x, y), h, w, &g);
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sx = xx[i] - mx * mx;
            let sy = yy[i] - my * my;
            let sxy = xy[i] - mx * my;
            ((2.0 * mx * my + C1) * (2.0 * sxy + C2)) / ((mx * mx + my * my + C1) * (sx + sy + C2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualityReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub crop_border: usize,
}

/// Rounds to the 8-bit grid after clamping, as a saved image would be.
pub fn to_8bit_grid(img: &Tensor) -> Tensor {
    img.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// PSNR and SSIM on the luma channel of two RGB images. The prediction is
/// clamped and rounded to the 8-bit grid first.
pub fn quality_y(pred: &Tensor, gt: &Tensor, border: usize) -> Result<QualityReport> {
    let yp = rgb_to_y(&to_8bit_grid(pred))?;
    let yg = rgb_to_y(gt)?;
    Ok(QualityReport {
        psnr_db: psnr(&yp, &yg, border)?,
        ssim: ssim(&yp, &yg, border)?,
        crop_border: border,
    })
}

/// CSV rendering of a PSNR value; the infinite sentinel becomes `inf`.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}
