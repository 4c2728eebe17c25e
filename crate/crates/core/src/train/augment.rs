//! The eight symmetries of the square, applied to `C×H×W` tensors.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

/// Horizontal flip (optional) followed by `rot` counter-clockwise quarter
/// turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub flip: bool,
    pub rot: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { flip: false, rot: 0 };

    pub fn all() -> [Dihedral; 8] {
        std::array::from_fn(|i| Dihedral {
            flip: i >= 4,
            rot: (i % 4) as u8,
        })
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Dihedral::all()[rng.gen_range(0..8)]
    }

    /// The transform equal to applying `self` and then `next`.
    pub fn then(self, next: Dihedral) -> Dihedral {
        // A flip after a rotation by k equals a rotation by -k after the flip.
        let (flip, rot) = if next.flip {
            (!self.flip, (4 - self.rot % 4) % 4 + next.rot)
        } else {
            (self.flip, self.rot + next.rot)
        };
        Dihedral { flip, rot: rot % 4 }
    }

    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        let mut t = if self.flip { hflip(x)? } else { x.clone() };
        for _ in 0..self.rot % 4 {
            t = rot90(&t)?;
        }
        Ok(t)
    }
}

fn chw(x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "expected C×H×W".into(),
        }),
    }
}

pub fn hflip(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(x)?;
    let d = x.data();
    let mut out = Vec::with_capacity(d.len());
    for row in 0..c * h {
        out.extend(d[row * w..(row + 1) * w].iter().rev());
    }
    Tensor::new(vec![c, h, w], out)
}

/// Counter-clockwise quarter turn: `out[i][j] = in[j][W-1-i]`.
pub fn rot90(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(x)?;
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for ch in 0..c {
        for i in 0..w {
            for j in 0..h {
                out[(ch * w + i) * h + j] = d[(ch * h + j) * w + (w - 1 - i)];
            }
        }
    }
    Tensor::new(vec![c, w, h], out)
}

/// Applies one random symmetry to both tensors of an aligned pair.
pub fn augment<R: Rng + ?Sized>(hr: &Tensor, lr: &Tensor, rng: &mut R) -> Result<(Tensor, Tensor)> {
    let g = Dihedral::sample(rng);
    Ok((g.apply(hr)?, g.apply(lr)?))
}
