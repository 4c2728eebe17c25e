//! Separable bicubic resizing (Catmull-Rom, `a = -0.5`) with pixel-centre
//! alignment, replicated borders and an anti-aliasing stretch of the kernel
//! when shrinking.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per output index: source indices and normalized weights.
fn axis_weights(n_in: usize, n_out: usize) -> Vec<(Vec<usize>, Vec<f64>)> {
    let scale = n_out as f64 / n_in as f64;
    let shrink = scale.min(1.0);
    let width = 4.0 / shrink;
    (0..n_out)
        .map(|i| {
            let u = (i as f64 + 0.5) / scale - 0.5;
            let left = (u - width / 2.0).floor() as i64;
            let taps = width.ceil() as i64 + 2;
            let mut idx = Vec::with_capacity(taps as usize);
            let mut wts = Vec::with_capacity(taps as usize);
            for j in left..left + taps {
                let wgt = shrink * cubic(shrink * (u - j as f64));
                if wgt != 0.0 {
                    idx.push(j.clamp(0, n_in as i64 - 1) as usize);
                    wts.push(wgt);
                }
            }
            let s: f64 = wts.iter().sum();
            wts.iter_mut().for_each(|w| *w /= s);
            (idx, wts)
        })
        .collect()
}

/// Resizes a `C×H×W` tensor to `C×out_h×out_w`.
pub fn resize_bicubic(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let &[c, h, w] = img.shape() else {
        return Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: "resize expects C×H×W".into(),
        });
    };
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::InvalidShape {
            shape: vec![c, out_h, out_w],
            reason: "resize to or from an empty image".into(),
        });
    }
    let (wy, wx) = (axis_weights(h, out_h), axis_weights(w, out_w));
    let src = img.data();
    let mut tmp = vec![0.0; c * h * out_w];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
            for (x, (idx, wts)) in wx.iter().enumerate() {
                tmp[(ch * h + y) * out_w + x] = idx.iter().zip(wts).map(|(&j, &k)| row[j] * k).sum();
            }
        }
    }
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        for (y, (idx, wts)) in wy.iter().enumerate() {
            for x in 0..out_w {
                out[(ch * out_h + y) * out_w + x] = idx
                    .iter()
                    .zip(wts)
                    .map(|(&j, &k)| tmp[(ch * h + j) * out_w + x] * k)
                    .sum();
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_interpolates() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        // partition of unity at a half-pixel offset
        let s: f64 = [-1.5, -0.5, 0.5, 1.5].iter().map(|&x| cubic(x)).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_preserved_both_ways() {
        let img = Tensor::full(&[2, 6, 9], 0.3);
        for &(oh, ow) in &[(3, 3), (12, 18), (2, 5)] {
            let r = resize_bicubic(&img, oh, ow).unwrap();
            assert!(r.data().iter().all(|v| (v - 0.3).abs() < 1e-14));
        }
    }

    #[test]
    fn identity_size_is_exact() {
        let img = Tensor::new(vec![1, 3, 4], (0..12).map(|v| v as f64 / 11.0).collect()).unwrap();
        let r = resize_bicubic(&img, 3, 4).unwrap();
        for (a, b) in r.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_ramp_interior_reproduced() {
        // Catmull-Rom reproduces linear functions away from the border.
        let w = 16;
        let img = Tensor::new(vec![1, 1, w], (0..w).map(|v| v as f64).collect()).unwrap();
        let up = resize_bicubic(&img, 1, 2 * w).unwrap();
        for x in 4..2 * w - 4 {
            let u = (x as f64 + 0.5) / 2.0 - 0.5;
            assert!((up.data()[x] - u).abs() < 1e-12);
        }
    }
}
