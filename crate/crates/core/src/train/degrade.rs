//! Synthetic degradations for building training and validation pairs.

use crate::error::{Error, Result};
use crate::resample::resize_bicubic;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegradationSpec {
    BicubicDown { scale: u32 },
    /// `sigma` on the 0–255 scale.
    GaussianNoise { sigma: f64 },
    JpegLike { quality: u32 },
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DegradationSpec::BicubicDown { scale } if scale == 0 => Err(Error::Config("bicubic scale must be ≥ 1".into())),
            DegradationSpec::GaussianNoise { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::Config(format!("noise sigma must be finite and ≥ 0, got {sigma}")))
            }
            DegradationSpec::JpegLike { quality } if !(1..=100).contains(&quality) => {
                Err(Error::Config(format!("jpeg quality must lie in [1, 100], got {quality}")))
            }
            _ => Ok(()),
        }
    }
}

pub fn degrade(hr: &Tensor, spec: &DegradationSpec, seed: u64) -> Result<Tensor> {
    spec.validate()?;
    let &[_, h, w] = hr.shape() else {
        return Err(Error::InvalidShape {
            shape: hr.shape().to_vec(),
            reason: "degrade expects C×H×W".into(),
        });
    };
    match *spec {
        DegradationSpec::BicubicDown { scale } => {
            let s = scale as usize;
            if h % s != 0 || w % s != 0 {
                return Err(Error::InvalidShape {
                    shape: hr.shape().to_vec(),
                    reason: format!("size not divisible by scale {s}"),
                });
            }
            // Bicubic overshoot is clipped as it would be in a stored image.
            Ok(resize_bicubic(hr, h / s, w / s)?.map(|v| v.clamp(0.0, 1.0)))
        }
        DegradationSpec::GaussianNoise { sigma } => {
            if sigma == 0.0 {
                return Ok(hr.clone());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = Normal::new(0.0, sigma / 255.0).map_err(|e| Error::Config(e.to_string()))?;
            let noisy = hr.data().iter().map(|v| (v + n.sample(&mut rng)).clamp(0.0, 1.0)).collect();
            Tensor::new(hr.shape().to_vec(), noisy)
        }
        DegradationSpec::JpegLike { quality } => jpeg_like(hr, quality),
    }
}

const LUMA_TABLE: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., //
    12., 12., 14., 19., 26., 58., 60., 55., //
    14., 13., 16., 24., 40., 57., 69., 56., //
    14., 17., 22., 29., 51., 87., 80., 62., //
    18., 22., 37., 56., 68., 109., 103., 77., //
    24., 35., 55., 64., 81., 104., 113., 92., //
    49., 64., 78., 87., 103., 121., 120., 101., //
    72., 92., 95., 98., 112., 100., 103., 99.,
];

/// Luminance table scaled by the IJG quality rule, entries clamped to
/// `[1, 255]`.
pub fn quant_table(quality: u32) -> [f64; 64] {
    let q = quality.clamp(1, 100) as f64;
    let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    LUMA_TABLE.map(|t| ((t * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0))
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (k, row) in m.iter_mut().enumerate() {
        let c = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = c * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
        }
    }
    m
}

/// `out = M · x · Mᵀ` for an 8×8 block, or its transpose form when
/// `inverse`.
fn transform(block: &[f64; 64], m: &[[f64; 8]; 8], inverse: bool) -> [f64; 64] {
    let at = |i: usize, j: usize| if inverse { m[j][i] } else { m[i][j] };
    let mut tmp = [0.0; 64];
    for i in 0..8 {
        for j in 0..8 {
            tmp[i * 8 + j] = (0..8).map(|k| at(i, k) * block[k * 8 + j]).sum();
        }
    }
    let mut out = [0.0; 64];
    for i in 0..8 {
        for j in 0..8 {
            out[i * 8 + j] = (0..8).map(|k| tmp[i * 8 + k] * at(j, k)).sum();
        }
    }
    out
}

/// Blockwise DCT quantization of every channel with the luminance table.
/// Planes are edge-padded to whole blocks and cropped back afterwards.
pub fn jpeg_like(img: &Tensor, quality: u32) -> Result<Tensor> {
    let &[c, h, w] = img.shape() else {
        return Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: "jpeg_like expects C×H×W".into(),
        });
    };
    let table = quant_table(quality);
    let m = dct_basis();
    let d = img.data();
    let mut out = vec![0.0; d.len()];
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                let mut block = [0.0; 64];
                for i in 0..8 {
                    for j in 0..8 {
                        let (y, x) = ((by + i).min(h - 1), (bx + j).min(w - 1));
                        block[i * 8 + j] = plane[y * w + x] * 255.0 - 128.0;
                    }
                }
                let mut coef = transform(&block, &m, false);
                for (v, q) in coef.iter_mut().zip(&table) {
                    *v = (*v / q).round() * q;
                }
                let rec = transform(&coef, &m, true);
                for i in 0..8.min(h - by) {
                    for j in 0..8.min(w - bx) {
                        out[ch * h * w + (by + i) * w + bx + j] = ((rec[i * 8 + j] + 128.0) / 255.0).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::augment::Dihedral;

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        Tensor::rand_uniform(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_sigma_is_identity() {
        let x = rand(&[3, 8, 8], 1);
        assert_eq!(degrade(&x, &DegradationSpec::GaussianNoise { sigma: 0.0 }, 5).unwrap(), x);
    }

    #[test]
    fn noise_level() {
        let x = Tensor::full(&[1, 300, 300], 0.5);
        let y = degrade(&x, &DegradationSpec::GaussianNoise { sigma: 25.0 }, 7).unwrap();
        let n = y.numel() as f64;
        let mean = y.data().iter().sum::<f64>() / n;
        let sd = (y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd / (25.0 / 255.0) - 1.0).abs() < 0.02, "{sd}");
    }

    #[test]
    fn jpeg_constant_block() {
        // A constant block has only a DC term: 8·(255v − 128). With v = 160/255
        // at quality 50 the DC step is 16 and 256 is a multiple of it.
        let x = Tensor::full(&[3, 16, 24], 160.0 / 255.0);
        let y = jpeg_like(&x, 50).unwrap();
        for v in y.data() {
            assert!((v - 160.0 / 255.0).abs() < 1e-12);
        }
        let z = jpeg_like(&Tensor::full(&[1, 13, 9], 0.3), 30).unwrap();
        let first = z.data()[0];
        assert!(z.data().iter().all(|v| (v - first).abs() < 1e-12));
    }

    #[test]
    fn jpeg_quality_ordering() {
        let x = rand(&[1, 16, 16], 3);
        let err = |q| {
            let y = jpeg_like(&x, q).unwrap();
            x.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        assert!(err(95) < err(30));
        assert!(err(30) < err(5));
        assert_eq!(quant_table(50)[0], 16.0);
        assert_eq!(quant_table(100), [1.0; 64]);
    }

    #[test]
    fn bicubic_commutes_with_symmetries() {
        let hr = rand(&[3, 16, 24], 11);
        let spec = DegradationSpec::BicubicDown { scale: 2 };
        let lr = degrade(&hr, &spec, 0).unwrap();
        for g in Dihedral::all() {
            let a = degrade(&g.apply(&hr).unwrap(), &spec, 0).unwrap();
            let b = g.apply(&lr).unwrap();
            let err = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{g:?}: {err}");
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let x = Tensor::zeros(&[3, 8, 8]);
        assert!(degrade(&x, &DegradationSpec::JpegLike { quality: 0 }, 0).is_err());
        assert!(degrade(&x, &DegradationSpec::GaussianNoise { sigma: -1.0 }, 0).is_err());
        assert!(degrade(&Tensor::zeros(&[3, 9, 8]), &DegradationSpec::BicubicDown { scale: 2 }, 0).is_err());
    }
}
