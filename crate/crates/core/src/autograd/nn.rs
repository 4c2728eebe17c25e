use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

impl Tape {
    /// Layer normalization across the leading (channel) axis, independently
    /// for every spatial position, with per-channel affine `gamma`, `beta`.
    pub fn layer_norm_channels(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.shape()[0];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let p = xv.numel() / c;
        let xd = xv.data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut mean = vec![0.0; p];
        let mut rstd = vec![0.0; p];
        for ch in 0..c {
            for (m, &v) in mean.iter_mut().zip(&xd[ch * p..(ch + 1) * p]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= c as f64);
        for ch in 0..c {
            for ((r, &v), &m) in rstd.iter_mut().zip(&xd[ch * p..(ch + 1) * p]).zip(&mean) {
                *r += (v - m) * (v - m);
            }
        }
        rstd.iter_mut().for_each(|r| *r = 1.0 / (*r / c as f64 + eps).sqrt());
        let mut out = vec![0.0; xd.len()];
        for ch in 0..c {
            let (g, b) = (gd[ch], bd[ch]);
            for i in 0..p {
                out[ch * p + i] = (xd[ch * p + i] - mean[i]) * rstd[i] * g + b;
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        let bw = Box::new(move |inp: &[&Tensor], _: &Tensor, g: &Tensor| {
            let (xd, gam) = (inp[0].data(), inp[1].data());
            let gd = g.data();
            let mut gx = vec![0.0; xd.len()];
            let mut ggam = vec![0.0; c];
            let mut gbeta = vec![0.0; c];
            let mut s1 = vec![0.0; p];
            let mut s2 = vec![0.0; p];
            for ch in 0..c {
                for i in 0..p {
                    let xhat = (xd[ch * p + i] - mean[i]) * rstd[i];
                    let gy = gd[ch * p + i];
                    ggam[ch] += gy * xhat;
                    gbeta[ch] += gy;
                    let gh = gy * gam[ch];
                    s1[i] += gh;
                    s2[i] += gh * xhat;
                }
            }
            let cf = c as f64;
            for ch in 0..c {
                for i in 0..p {
                    let xhat = (xd[ch * p + i] - mean[i]) * rstd[i];
                    let gh = gd[ch * p + i] * gam[ch];
                    gx[ch * p + i] = rstd[i] * (gh - s1[i] / cf - xhat * s2[i] / cf);
                }
            }
            Ok(vec![
                Some(Tensor::from_parts(inp[0].shape().to_vec(), gx)),
                Some(Tensor::from_vec(ggam)),
                Some(Tensor::from_vec(gbeta)),
            ])
        });
        self.push("layer_norm", out, &[x, gamma, beta], bw)
    }

    /// Global average pool of a `C×H×W` map to `C×1×1`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 3 {
            return Err(Error::InvalidShape {
                shape: xv.shape().to_vec(),
                reason: "channel_mean expects C×H×W".into(),
            });
        }
        let c = xv.shape()[0];
        let p = xv.numel() / c;
        let out: Vec<f64> = (0..c)
            .map(|ch| xv.data()[ch * p..(ch + 1) * p].iter().sum::<f64>() / p as f64)
            .collect();
        let out = Tensor::from_parts(vec![c, 1, 1], out);
        let bw = Box::new(move |inp: &[&Tensor], _: &Tensor, g: &Tensor| {
            let mut gx = Vec::with_capacity(c * p);
            for &gv in g.data() {
                gx.extend(std::iter::repeat(gv / p as f64).take(p));
            }
            Ok(vec![Some(Tensor::from_parts(inp[0].shape().to_vec(), gx))])
        });
        self.push("channel_mean", out, &[x], bw)
    }

    /// Rearranges `C·r²×H×W` into `C×rH×rW`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 3 || s[0] % (r * r) != 0 {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: format!("pixel_shuffle needs channels divisible by {}", r * r),
            });
        }
        let (c, h, w) = (s[0] / (r * r), s[1], s[2]);
        let index = move |ch: usize, oy: usize, ox: usize| {
            let (y, i) = (oy / r, oy % r);
            let (xx, j) = (ox / r, ox % r);
            ((ch * r * r + i * r + j) * h + y) * w + xx
        };
        let (oh, ow) = (h * r, w * r);
        let mut out = vec![0.0; xv.numel()];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    out[(ch * oh + oy) * ow + ox] = xv.data()[index(ch, oy, ox)];
                }
            }
        }
        let out = Tensor::from_parts(vec![c, oh, ow], out);
        let bw = Box::new(move |inp: &[&Tensor], _: &Tensor, g: &Tensor| {
            let mut gx = vec![0.0; g.numel()];
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        gx[index(ch, oy, ox)] = g.data()[(ch * oh + oy) * ow + ox];
                    }
                }
            }
            Ok(vec![Some(Tensor::from_parts(inp[0].shape().to_vec(), gx))])
        });
        self.push("pixel_shuffle", out, &[x], bw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_normalizes_each_position() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![3, 2], vec![1., 10., 2., 20., 3., 60.]).unwrap());
        let g = t.constant(Tensor::ones(&[3]));
        let b = t.constant(Tensor::zeros(&[3]));
        let y = t.layer_norm_channels(x, g, b, 0.0).unwrap();
        let v = t.value(y).data();
        for pos in 0..2 {
            let col: Vec<f64> = (0..3).map(|c| v[c * 2 + pos]).collect();
            let m: f64 = col.iter().sum::<f64>() / 3.0;
            let var: f64 = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pixel_shuffle_layout() {
        let mut t = Tape::new();
        // 4 channels of a 1×1 map become one 2×2 map in raster order.
        let x = t.constant(Tensor::new(vec![4, 1, 1], vec![1., 2., 3., 4.]).unwrap());
        let y = t.pixel_shuffle(x, 2).unwrap();
        assert_eq!(t.shape(y), &[1, 2, 2]);
        assert_eq!(t.value(y).data(), &[1., 2., 3., 4.]);
    }
}
