//! Dense row-major tensors of `f64`.
//!
//! [`Tensor`] is a plain value: shape plus contiguous data. Gradient
//! bookkeeping lives on the [`crate::autograd::Tape`], which owns the
//! tensors recorded during a forward pass.

use crate::error::{Error, Result};
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                shape,
                reason: "extents must be positive".into(),
            });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("expected {} elements, got {}", n, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for shapes already known to be consistent.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "zip_map",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: "transpose needs rank 2".into(),
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_parts(vec![c, r], out))
    }

    /// Channel slice `[start, end)` along the leading axis.
    pub fn narrow0(&self, start: usize, end: usize) -> Result<Tensor> {
        if self.rank() == 0 || end > self.shape[0] || start >= end {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("cannot narrow to {start}..{end}"),
            });
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor::from_parts(
            shape,
            self.data[start * inner..end * inner].to_vec(),
        ))
    }
}

/// Shape resulting from trailing-dimension broadcasting of `a` and `b`.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out_shape`, the flat index into a tensor of shape
/// `src` broadcast to it.
pub(crate) fn broadcast_index_map(src: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..src.len()).rev() {
        strides[i + offset] = if src[i] == 1 { 0 } else { s };
        s *= src[i];
    }
    let n: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    map
}

/// Sums `grad` (shaped like the broadcast output) back down to `src`.
pub(crate) fn reduce_to_shape(grad: &Tensor, src: &[usize]) -> Tensor {
    if grad.shape() == src {
        return grad.clone();
    }
    let n: usize = src.iter().product();
    let mut out = vec![0.0; n];
    if n == 1 {
        out[0] = grad.sum();
    } else {
        let map = broadcast_index_map(src, grad.shape());
        for (g, &m) in grad.data().iter().zip(&map) {
            out[m] += g;
        }
    }
    Tensor::from_parts(src.to_vec(), out)
}
