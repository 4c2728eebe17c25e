use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

impl Tape {
    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        let bw = Box::new(|inp: &[&Tensor], _: &Tensor, g: &Tensor| {
            Ok(vec![Some(Tensor::full(inp[0].shape(), g.item()))])
        });
        self.push("sum", out, &[a], bw)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).mean());
        let bw = Box::new(|inp: &[&Tensor], _: &Tensor, g: &Tensor| {
            let n = inp[0].numel() as f64;
            Ok(vec![Some(Tensor::full(inp[0].shape(), g.item() / n))])
        });
        self.push("mean", out, &[a], bw)
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::ShapeMismatch {
                op: "dot",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let out = Tensor::scalar(av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum());
        let bw = Box::new(|inp: &[&Tensor], _: &Tensor, g: &Tensor| {
            let s = g.item();
            Ok(vec![Some(inp[1].scale(s)), Some(inp[0].scale(s))])
        });
        self.push("dot", out, &[a, b], bw)
    }

    /// Per-tensor statistics `(mean, population std, min, max)` as a
    /// 4-vector. With `abs_mean` the first component is `|mean|`.
    ///
    /// Min and max route their gradient to the first arg-extremum; the std
    /// gradient is zero for a constant tensor.
    pub fn stats(&mut self, a: Var, abs_mean: bool) -> Result<Var> {
        let x = self.value(a);
        let n = x.numel() as f64;
        let mu = crate::quant::stats::shifted_mean(x.data());
        let var = x.data().iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let sigma = var.sqrt();
        let (mut imin, mut imax) = (0, 0);
        for (i, &v) in x.data().iter().enumerate() {
            if v < x.data()[imin] {
                imin = i;
            }
            if v > x.data()[imax] {
                imax = i;
            }
        }
        let first = if abs_mean { mu.abs() } else { mu };
        let out = Tensor::from_vec(vec![first, sigma, x.data()[imin], x.data()[imax]]);
        let bw = Box::new(move |inp: &[&Tensor], _: &Tensor, g: &Tensor| {
            let gd = g.data();
            let sign = if abs_mean {
                if mu > 0.0 {
                    1.0
                } else if mu < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            } else {
                1.0
            };
            let gmu = gd[0] * sign / n;
            let gs = if sigma > 0.0 { gd[1] / (n * sigma) } else { 0.0 };
            let mut out: Vec<f64> = inp[0]
                .data()
                .iter()
                .map(|&v| gmu + gs * (v - mu))
                .collect();
            out[imin] += gd[2];
            out[imax] += gd[3];
            Ok(vec![Some(Tensor::from_parts(inp[0].shape().to_vec(), out))])
        });
        self.push("stats", out, &[a], bw)
    }
}
