//! The bundled toy dataset: eight procedural 256×256 RGB scenes drawn
//! from one generator, so the training and validation images share a
//! distribution. Each scene layers a value-noise background, a linear
//! gradient, a rotated checkerboard patch, a stripe patch and a handful of
//! discs, rings and rotated boxes, with random colours and geometry.
//! Hard edges are anti-aliased by 4×4 supersampling. The committed PNGs
//! under `data/toy/hr` are exactly what [`toy_image`] produces.
//!
//! Only `+ - * /`, `floor` and `sqrt` are used, so the pixels do not depend
//! on the platform's transcendental functions.

use super::png::save_png;
use crate::error::Result;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub const TOY_COUNT: usize = 8;
pub const TOY_SIZE: usize = 256;
/// The last images of the sorted list form the validation split.
pub const TOY_VAL_COUNT: usize = 2;

const SCENE_SALT: u64 = 0x70_7953_CE4E;
const SUPERSAMPLE: usize = 4;

pub fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy/hr")
}

pub fn toy_name(i: usize) -> String {
    format!("toy_{i:02}.png")
}

fn hash(x: i64, y: i64, seed: u64) -> f64 {
    let mut h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ seed;
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise with smoothstep weights, lattice spacing `cell`.
fn value_noise(x: f64, y: f64, cell: f64, seed: u64) -> f64 {
    let (fx, fy) = (x / cell, y / cell);
    let (ix, iy) = (fx.floor(), fy.floor());
    let (tx, ty) = (smooth(fx - ix), smooth(fy - iy));
    let (ix, iy) = (ix as i64, iy as i64);
    let top = hash(ix, iy, seed) * (1.0 - tx) + hash(ix + 1, iy, seed) * tx;
    let bot = hash(ix, iy + 1, seed) * (1.0 - tx) + hash(ix + 1, iy + 1, seed) * tx;
    top * (1.0 - ty) + bot * ty
}

fn fbm(x: f64, y: f64, seed: u64) -> f64 {
    let (mut sum, mut amp, mut cell, mut norm) = (0.0, 0.5, 64.0, 0.0);
    for o in 0..5 {
        sum += amp * value_noise(x, y, cell, seed + o);
        norm += amp;
        amp *= 0.5;
        cell *= 0.5;
    }
    sum / norm
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    std::array::from_fn(|c| a[c] * (1.0 - t) + b[c] * t)
}

fn parity(u: f64, v: f64) -> bool {
    (u.floor() as i64 + v.floor() as i64).rem_euclid(2) == 1
}

/// Rotated frame: `(u, v)` are the coordinates of `(x, y)` relative to
/// `centre` along the unit axis `dir` and its normal.
#[derive(Clone, Copy)]
struct Frame {
    centre: [f64; 2],
    dir: [f64; 2],
}

impl Frame {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.centre[0], y - self.centre[1]);
        (dx * self.dir[0] + dy * self.dir[1], -dx * self.dir[1] + dy * self.dir[0])
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Disc { r: f64 },
    Ring { r: f64, width: f64 },
    Boxed { hu: f64, hv: f64 },
    Checker { hu: f64, hv: f64, cell: f64, other: [f64; 3] },
    Stripes { r: f64, period: f64, other: [f64; 3] },
}

#[derive(Clone, Copy)]
struct Layer {
    frame: Frame,
    shape: Shape,
    colour: [f64; 3],
    alpha: f64,
}

impl Layer {
    /// Colour of the layer at `(x, y)`, or `None` outside it.
    fn sample(&self, x: f64, y: f64) -> Option<[f64; 3]> {
        let (u, v) = self.frame.local(x, y);
        let r2 = u * u + v * v;
        match self.shape {
            Shape::Disc { r } => (r2 <= r * r).then_some(self.colour),
            Shape::Ring { r, width } => {
                let d = r2.sqrt() - r;
                (d.abs() <= width / 2.0).then_some(self.colour)
            }
            Shape::Boxed { hu, hv } => (u.abs() <= hu && v.abs() <= hv).then_some(self.colour),
            Shape::Checker { hu, hv, cell, other } => {
                if u.abs() > hu || v.abs() > hv {
                    None
                } else if parity(u / cell, v / cell) {
                    Some(other)
                } else {
                    Some(self.colour)
                }
            }
            Shape::Stripes { r, period, other } => {
                if r2 > r * r {
                    None
                } else if (u / period).floor() as i64 % 2 == 0 {
                    Some(other)
                } else {
                    Some(self.colour)
                }
            }
        }
    }
}

struct Scene {
    seed: u64,
    noise_cell: f64,
    bg: [[f64; 3]; 2],
    gradient: Frame,
    gradient_colour: [f64; 3],
    layers: Vec<Layer>,
}

fn colour(rng: &mut ChaCha8Rng) -> [f64; 3] {
    std::array::from_fn(|_| rng.gen_range(0.05..0.95))
}

fn direction(rng: &mut ChaCha8Rng) -> [f64; 2] {
    loop {
        let (a, b) = (rng.gen_range(-1.0f64..1.0), rng.gen_range(-1.0f64..1.0));
        let n = (a * a + b * b).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [a / n, b / n];
        }
    }
}

fn frame(rng: &mut ChaCha8Rng) -> Frame {
    let n = TOY_SIZE as f64;
    Frame {
        centre: [rng.gen_range(0.0..n), rng.gen_range(0.0..n)],
        dir: direction(rng),
    }
}

impl Scene {
    fn new(i: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(SCENE_SALT + i as u64);
        let mut layers = Vec::new();
        let checker = Shape::Checker {
            hu: rng.gen_range(40.0..90.0),
            hv: rng.gen_range(40.0..90.0),
            cell: rng.gen_range(6.0..18.0),
            other: colour(&mut rng),
        };
        let stripes = Shape::Stripes {
            r: rng.gen_range(35.0..80.0),
            period: rng.gen_range(3.0..10.0),
            other: colour(&mut rng),
        };
        for shape in [checker, stripes] {
            layers.push(Layer {
                frame: frame(&mut rng),
                shape,
                colour: colour(&mut rng),
                alpha: 1.0,
            });
        }
        for _ in 0..rng.gen_range(8..14) {
            let shape = match rng.gen_range(0..3) {
                0 => Shape::Disc { r: rng.gen_range(5.0..35.0) },
                1 => Shape::Ring {
                    r: rng.gen_range(10.0..45.0),
                    width: rng.gen_range(2.0..8.0),
                },
                _ => Shape::Boxed {
                    hu: rng.gen_range(4.0..40.0),
                    hv: rng.gen_range(2.0..25.0),
                },
            };
            layers.push(Layer {
                frame: frame(&mut rng),
                shape,
                colour: colour(&mut rng),
                alpha: rng.gen_range(0.5..1.0),
            });
        }
        Scene {
            seed: rng.gen(),
            noise_cell: rng.gen_range(24.0..96.0),
            bg: [colour(&mut rng), colour(&mut rng)],
            gradient: frame(&mut rng),
            gradient_colour: colour(&mut rng),
            layers,
        }
    }

    fn background(&self, x: f64, y: f64) -> [f64; 3] {
        let t = fbm(x * 64.0 / self.noise_cell, y * 64.0 / self.noise_cell, self.seed);
        let base = mix(self.bg[0], self.bg[1], t);
        let (u, _) = self.gradient.local(x, y);
        let g = (u / TOY_SIZE as f64 + 0.5).clamp(0.0, 1.0);
        mix(base, self.gradient_colour, 0.4 * g)
    }

    fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let bg = self.background(x as f64 + 0.5, y as f64 + 0.5);
        let k = SUPERSAMPLE;
        let mut acc = [0.0; 3];
        for sy in 0..k {
            for sx in 0..k {
                let px = x as f64 + (sx as f64 + 0.5) / k as f64;
                let py = y as f64 + (sy as f64 + 0.5) / k as f64;
                let mut c = bg;
                for l in &self.layers {
                    if let Some(lc) = l.sample(px, py) {
                        c = mix(c, lc, l.alpha);
                    }
                }
                for ch in 0..3 {
                    acc[ch] += c[ch];
                }
            }
        }
        acc.map(|v| v / (k * k) as f64)
    }
}

/// Toy image `i` (`0 ≤ i < TOY_COUNT`) on the 8-bit grid.
pub fn toy_image(i: usize) -> Tensor {
    assert!(i < TOY_COUNT, "toy index {i} out of range");
    let s = TOY_SIZE;
    let scene = Scene::new(i);
    let mut data = vec![0.0; 3 * s * s];
    for y in 0..s {
        for x in 0..s {
            let p = scene.pixel(x, y);
            for c in 0..3 {
                data[c * s * s + y * s + x] = (p[c].clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
    }
    Tensor::new(vec![3, s, s], data).expect("toy dimensions")
}

/// Writes all toy images into `dir`, creating it if needed.
pub fn write_toy_dataset(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for i in 0..TOY_COUNT {
        save_png(&toy_image(i), &dir.join(toy_name(i)))?;
    }
    Ok(())
}
