use super::linalg::{gemm, gemm_at, gemm_bt};
use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct Geom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
    ho: usize,
    wo: usize,
    depthwise: bool,
}

impl Geom {
    fn new(x: &[usize], k: &[usize], pad: usize, stride: usize, depthwise: bool) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op: if depthwise { "depthwise_conv2d" } else { "conv2d" },
            lhs: x.to_vec(),
            rhs: k.to_vec(),
        };
        if x.len() != 3 || k.len() != 4 {
            return Err(mismatch());
        }
        let (cin, h, w) = (x[0], x[1], x[2]);
        let (cout, kc, kh, kw) = (k[0], k[1], k[2], k[3]);
        if depthwise {
            if kc != 1 || cout != cin {
                return Err(mismatch());
            }
        } else if kc != cin {
            return Err(mismatch());
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidShape {
                shape: k.to_vec(),
                reason: "kernel extents must be odd".into(),
            });
        }
        if stride == 0 {
            return Err(Error::Config("conv stride must be >= 1".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::InvalidShape {
                shape: x.to_vec(),
                reason: "convolution output would be empty".into(),
            });
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(Self {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            pad,
            stride,
            ho,
            wo,
            depthwise,
        })
    }

    /// Range of output columns whose tap `kx` lands inside the input.
    #[inline]
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        // ix = ox*stride + kx - pad  in [0, w)
        let lo = if kx >= self.pad {
            0
        } else {
            (self.pad - kx).div_ceil(self.stride)
        };
        let hi_excl = if self.w + self.pad > kx {
            ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo, hi_excl.max(lo))
    }

    #[inline]
    fn iy(&self, oy: usize, ky: usize) -> Option<usize> {
        let v = (oy * self.stride + ky) as isize - self.pad as isize;
        (v >= 0 && (v as usize) < self.h).then_some(v as usize)
    }

    /// Visits every (input plane, kernel tap, output row) triple.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize)) {
        // f(co, ci, kidx, iy, oy, ox_lo, ox_hi)
        for co in 0..self.cout {
            let cis = if self.depthwise { co..co + 1 } else { 0..self.cin };
            for ci in cis {
                let kc = if self.depthwise { 0 } else { ci };
                let kin = if self.depthwise { 1 } else { self.cin };
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let kidx = ((co * kin + kc) * self.kh + ky) * self.kw + kx;
                        let (lo, hi) = self.ox_range(kx);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..self.ho {
                            if let Some(iy) = self.iy(oy, ky) {
                                f(co, ci, kidx, iy, oy, lo, hi);
                            }
                        }
                    }
                }
            }
        }
    }

    fn col(&self, ox: usize, kidx: usize) -> usize {
        let kx = kidx % self.kw;
        ox * self.stride + kx - self.pad
    }
}

fn forward(g: &Geom, x: &[f64], k: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.cout * g.ho * g.wo];
    g.for_each_tap(|co, ci, kidx, iy, oy, lo, hi| {
        let wv = k[kidx];
        if wv == 0.0 {
            return;
        }
        let orow = &mut out[(co * g.ho + oy) * g.wo..(co * g.ho + oy + 1) * g.wo];
        let xrow = &x[(ci * g.h + iy) * g.w..(ci * g.h + iy + 1) * g.w];
        if g.stride == 1 {
            let start = g.col(lo, kidx);
            for (o, &xv) in orow[lo..hi].iter_mut().zip(&xrow[start..start + (hi - lo)]) {
                *o += wv * xv;
            }
        } else {
            for ox in lo..hi {
                orow[ox] += wv * xrow[g.col(ox, kidx)];
            }
        }
    });
    out
}

fn backward(g: &Geom, x: &[f64], k: &[f64], gout: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    g.for_each_tap(|co, ci, kidx, iy, oy, lo, hi| {
        let grow = &gout[(co * g.ho + oy) * g.wo..(co * g.ho + oy + 1) * g.wo];
        let base = (ci * g.h + iy) * g.w;
        let wv = k[kidx];
        if g.stride == 1 {
            let start = g.col(lo, kidx);
            let xrow = &x[base + start..base + start + (hi - lo)];
            let mut acc = 0.0;
            for (&gv, &xv) in grow[lo..hi].iter().zip(xrow) {
                acc += gv * xv;
            }
            gk[kidx] += acc;
            let gxrow = &mut gx[base + start..base + start + (hi - lo)];
            for (gxv, &gv) in gxrow.iter_mut().zip(&grow[lo..hi]) {
                *gxv += wv * gv;
            }
        } else {
            for ox in lo..hi {
                let ix = base + g.col(ox, kidx);
                gk[kidx] += grow[ox] * x[ix];
                gx[ix] += wv * grow[ox];
            }
        }
    });
    (gx, gk)
}

/// Unfolds a stride-1 input into `[cin·kh·kw, ho·wo]` columns.
fn im2col(g: &Geom, x: &[f64]) -> Vec<f64> {
    let n = g.ho * g.wo;
    let mut col = vec![0.0; g.cin * g.kh * g.kw * n];
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (ci * g.kh + ky) * g.kw + kx;
                let (lo, hi) = g.ox_range(kx);
                if lo >= hi {
                    continue;
                }
                for oy in 0..g.ho {
                    if let Some(iy) = g.iy(oy, ky) {
                        let src = (ci * g.h + iy) * g.w + lo + kx - g.pad;
                        let dst = r * n + oy * g.wo;
                        col[dst + lo..dst + hi].copy_from_slice(&x[src..src + hi - lo]);
                    }
                }
            }
        }
    }
    col
}

fn col2im(g: &Geom, col: &[f64]) -> Vec<f64> {
    let n = g.ho * g.wo;
    let mut x = vec![0.0; g.cin * g.h * g.w];
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (ci * g.kh + ky) * g.kw + kx;
                let (lo, hi) = g.ox_range(kx);
                if lo >= hi {
                    continue;
                }
                for oy in 0..g.ho {
                    if let Some(iy) = g.iy(oy, ky) {
                        let dst = (ci * g.h + iy) * g.w + lo + kx - g.pad;
                        let src = r * n + oy * g.wo;
                        for (o, &v) in x[dst..dst + hi - lo].iter_mut().zip(&col[src + lo..src + hi]) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
    x
}

fn forward_gemm(g: &Geom, x: &[f64], k: &[f64]) -> Vec<f64> {
    gemm(k, &im2col(g, x), g.cout, g.cin * g.kh * g.kw, g.ho * g.wo)
}

fn backward_gemm(g: &Geom, x: &[f64], k: &[f64], gout: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (m, kk, n) = (g.cout, g.cin * g.kh * g.kw, g.ho * g.wo);
    let gk = gemm_bt(gout, &im2col(g, x), m, n, kk);
    let gx = col2im(g, &gemm_at(k, gout, m, kk, n));
    (gx, gk)
}

impl Tape {
    /// 2-D cross-correlation of a `C_in×H×W` map with a
    /// `C_out×C_in×kh×kw` kernel, zero padding on all sides.
    pub fn conv2d(&mut self, x: Var, k: Var, padding: usize, stride: usize) -> Result<Var> {
        self.conv_impl(x, k, padding, stride, false)
    }

    /// Per-channel convolution with a `C×1×kh×kw` kernel.
    pub fn depthwise_conv2d(&mut self, x: Var, k: Var, padding: usize) -> Result<Var> {
        self.conv_impl(x, k, padding, 1, true)
    }

    fn conv_impl(&mut self, x: Var, k: Var, pad: usize, stride: usize, dw: bool) -> Result<Var> {
        let g = Geom::new(self.shape(x), self.shape(k), pad, stride, dw)?;
        let unfold = !dw && stride == 1;
        let out = if unfold {
            forward_gemm(&g, self.value(x).data(), self.value(k).data())
        } else {
            forward(&g, self.value(x).data(), self.value(k).data())
        };
        let out = Tensor::from_parts(vec![g.cout, g.ho, g.wo], out);
        let bw = Box::new(move |inp: &[&Tensor], _: &Tensor, gout: &Tensor| {
            let (gx, gk) = if unfold {
                backward_gemm(&g, inp[0].data(), inp[1].data(), gout.data())
            } else {
                backward(&g, inp[0].data(), inp[1].data(), gout.data())
            };
            Ok(vec![
                Some(Tensor::from_parts(inp[0].shape().to_vec(), gx)),
                Some(Tensor::from_parts(inp[1].shape().to_vec(), gk)),
            ])
        });
        self.push(if dw { "depthwise_conv2d" } else { "conv2d" }, out, &[x, k], bw)
    }
}
