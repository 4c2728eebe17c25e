//! PNG decoding to and encoding from `3×H×W` tensors in `[0, 1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use image::{DynamicImage, ImageFormat, RgbImage};
use std::path::Path;

fn image_err(path: &Path, reason: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn planar<T: Copy + Into<f64>>(raw: &[T], w: u32, h: u32, chans: usize, max: f64) -> Result<Tensor> {
    let (h, w) = (h as usize, w as usize);
    let mut out = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            let src = if chans == 1 { raw[p] } else { raw[p * 3 + c] };
            out[c * h * w + p] = src.into() / max;
        }
    }
    Tensor::new(vec![3, h, w], out)
}

/// Reads an 8- or 16-bit RGB or grayscale PNG. Gray is replicated to three
/// channels; other color types are rejected.
pub fn load_png(path: &Path) -> Result<Tensor> {
    let img = image::ImageReader::open(path)
        .map_err(|e| image_err(path, e))?
        .with_guessed_format()
        .map_err(|e| image_err(path, e))?;
    if img.format() != Some(ImageFormat::Png) {
        return Err(image_err(path, "not a PNG file"));
    }
    let img = img.decode().map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width(), img.height());
    match &img {
        DynamicImage::ImageLuma8(b) => planar(b.as_raw(), w, h, 1, 255.0),
        DynamicImage::ImageRgb8(b) => planar(b.as_raw(), w, h, 3, 255.0),
        DynamicImage::ImageLuma16(b) => planar(b.as_raw(), w, h, 1, 65535.0),
        DynamicImage::ImageRgb16(b) => planar(b.as_raw(), w, h, 3, 65535.0),
        other => Err(image_err(path, format!("unsupported color type {:?}", other.color()))),
    }
}

/// Converts to 8-bit samples: clamp to `[0, 1]`, scale by 255 and round
/// half away from zero.
pub fn to_rgb8(img: &Tensor) -> Result<RgbImage> {
    let &[3, h, w] = img.shape() else {
        return Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: "PNG output must be 3×H×W".into(),
        });
    };
    let d = img.data();
    let mut raw = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for c in 0..3 {
            raw.push((d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer length matches"))
}

pub fn save_png(img: &Tensor, path: &Path) -> Result<()> {
    to_rgb8(img)?
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, ImageBuffer, Luma, Rgba, RgbaImage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_8bit_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vals: Vec<f64> = (0..3 * 7 * 5).map(|_| rng.gen_range(0..=255u8) as f64 / 255.0).collect();
        let x = Tensor::new(vec![3, 7, 5], vals).unwrap();
        save_png(&x, &p).unwrap();
        let y = load_png(&p).unwrap();
        assert_eq!(x, y);
        save_png(&y, &p).unwrap();
        let first = std::fs::read(&p).unwrap();
        save_png(&load_png(&p).unwrap(), &p).unwrap();
        assert_eq!(first, std::fs::read(&p).unwrap());
    }

    #[test]
    fn white_pixel_and_gray_replication() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.png");
        GrayImage::from_pixel(1, 1, Luma([255])).save(&p).unwrap();
        assert_eq!(load_png(&p).unwrap(), Tensor::full(&[3, 1, 1], 1.0));
    }

    #[test]
    fn sixteen_bit_strip_is_monotone() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let strip: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(64, 1, |x, _| Luma([x as u16 * 1000 + 7]));
        strip.save(&p).unwrap();
        let t = load_png(&p).unwrap();
        for c in 0..3 {
            let row = &t.data()[c * 64..(c + 1) * 64];
            assert!(row.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(row[0], 7.0 / 65535.0);
        }
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        let x = Tensor::new(vec![3, 1, 1], vec![0.5 / 255.0, 1.49 / 255.0, 2.0]).unwrap();
        assert_eq!(to_rgb8(&x).unwrap().as_raw(), &vec![1, 1, 255]);
    }

    #[test]
    fn rejects_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        RgbaImage::from_pixel(2, 2, Rgba([1, 2, 3, 4])).save(&p).unwrap();
        let e = load_png(&p).unwrap_err().to_string();
        assert!(e.contains("unsupported color type"), "{e}");
    }
}
