use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `out[m,n] = a[m,k] · b[k,n]`
pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert!(a.len() == m * k && b.len() == k * n);
    let mut out = vec![0.0; m * n];
    // SAFETY: the slices hold exactly the extents described by the strides.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0, out.as_mut_ptr(), n as isize, 1);
    }
    out
}

/// `out[m,k] = g[m,n] · b[k,n]ᵀ`
pub(crate) fn gemm_bt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    assert!(g.len() == m * n && b.len() == k * n);
    let mut out = vec![0.0; m * k];
    // SAFETY: as above; `b` is read transposed through its strides.
    unsafe {
        matrixmultiply::dgemm(m, n, k, 1.0, g.as_ptr(), n as isize, 1, b.as_ptr(), 1, n as isize, 0.0, out.as_mut_ptr(), k as isize, 1);
    }
    out
}

/// `out[k,n] = a[m,k]ᵀ · g[m,n]`
pub(crate) fn gemm_at(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert!(a.len() == m * k && g.len() == m * n);
    let mut out = vec![0.0; k * n];
    // SAFETY: as above; `a` is read transposed through its strides.
    unsafe {
        matrixmultiply::dgemm(k, m, n, 1.0, a.as_ptr(), 1, k as isize, g.as_ptr(), n as isize, 1, 0.0, out.as_mut_ptr(), n as isize, 1);
    }
    out
}

impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = Tensor::from_parts(vec![m, n], gemm(av.data(), bv.data(), m, k, n));
        let bw = Box::new(move |inp: &[&Tensor], _: &Tensor, g: &Tensor| {
            let ga = gemm_bt(g.data(), inp[1].data(), m, n, k);
            let gb = gemm_at(inp[0].data(), g.data(), m, k, n);
            Ok(vec![
                Some(Tensor::from_parts(vec![m, k], ga)),
                Some(Tensor::from_parts(vec![k, n], gb)),
            ])
        });
        self.push("matmul", out, &[a, b], bw)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let bw = Box::new(|inp: &[&Tensor], _: &Tensor, g: &Tensor| {
            Ok(vec![Some(g.reshape(inp[0].shape())?)])
        });
        self.push("reshape", out, &[a], bw)
    }

    /// Rows `[start, end)` along the leading axis.
    pub fn narrow0(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(a).narrow0(start, end)?;
        let bw = Box::new(move |inp: &[&Tensor], _: &Tensor, g: &Tensor| {
            let x = inp[0];
            let inner: usize = x.shape()[1..].iter().product();
            let mut full = vec![0.0; x.numel()];
            full[start * inner..end * inner].copy_from_slice(g.data());
            Ok(vec![Some(Tensor::from_parts(x.shape().to_vec(), full))])
        });
        self.push("narrow", out, &[a], bw)
    }

    /// Concatenation along the leading axis.
    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).shape().to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rank() != first.len() || v.shape()[1..] != first[1..] {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: v.shape().to_vec(),
                });
            }
            lead += v.shape()[0];
            sizes.push(v.numel());
            data.extend_from_slice(v.data());
        }
        let mut shape = first;
        shape[0] = lead;
        let out = Tensor::from_parts(shape, data);
        let bw = Box::new(move |inp: &[&Tensor], _: &Tensor, g: &Tensor| {
            let mut off = 0;
            Ok(inp
                .iter()
                .zip(&sizes)
                .map(|(x, &s)| {
                    let t = Tensor::from_parts(x.shape().to_vec(), g.data()[off..off + s].to_vec());
                    off += s;
                    Some(t)
                })
                .collect())
        });
        self.push("concat", out, parts, bw)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).t()?;
        let bw = Box::new(|_: &[&Tensor], _: &Tensor, g: &Tensor| Ok(vec![Some(g.t()?)]));
        self.push("transpose", out, &[a], bw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_m() {
        let mut t = Tape::new();
        let i = t.constant(Tensor::eye(2));
        let m = t.constant(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        let p = t.matmul(i, m).unwrap();
        assert_eq!(t.value(p), t.value(m));
    }

    #[test]
    fn hand_product() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        let b = t.constant(Tensor::new(vec![2, 1], vec![1., 1.]).unwrap());
        let p = t.matmul(a, b).unwrap();
        assert_eq!(t.value(p).data(), &[3.0, 7.0]);
        assert_eq!(t.value(p).shape(), &[2, 1]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        assert!(t.matmul(a, b).is_err());
    }
}
