use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{broadcast_index_map, broadcast_shape, reduce_to_shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Abs,
    Sqrt,
    Square,
    Clamp(f64, f64),
    Sigmoid,
    Silu,
    /// tanh approximation.
    Gelu,
    Softplus,
    Relu,
    /// Multiply by a constant.
    Scale(f64),
    /// Add a constant.
    Shift(f64),
}

impl BinaryOp {
    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Exp => "exp",
            UnaryOp::Abs => "abs",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Square => "square",
            UnaryOp::Clamp(..) => "clamp",
            UnaryOp::Sigmoid => "sigmoid",
            UnaryOp::Silu => "silu",
            UnaryOp::Gelu => "gelu",
            UnaryOp::Softplus => "softplus",
            UnaryOp::Relu => "relu",
            UnaryOp::Scale(_) => "scale",
            UnaryOp::Shift(_) => "shift",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Exp => x.exp(),
            UnaryOp::Abs => x.abs(),
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Square => x * x,
            UnaryOp::Clamp(lo, hi) => x.clamp(lo, hi),
            UnaryOp::Sigmoid => sigmoid(x),
            UnaryOp::Silu => x * sigmoid(x),
            UnaryOp::Gelu => 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()),
            UnaryOp::Softplus => softplus(x),
            UnaryOp::Relu => x.max(0.0),
            UnaryOp::Scale(c) => x * c,
            UnaryOp::Shift(c) => x + c,
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryOp::Neg => -1.0,
            UnaryOp::Exp => y,
            UnaryOp::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryOp::Sqrt => {
                if y > 0.0 {
                    0.5 / y
                } else {
                    0.0
                }
            }
            UnaryOp::Square => 2.0 * x,
            UnaryOp::Clamp(lo, hi) => {
                if x >= lo && x <= hi {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryOp::Sigmoid => y * (1.0 - y),
            UnaryOp::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            UnaryOp::Gelu => {
                let inner = GELU_K * (x + GELU_C * x * x * x);
                let t = inner.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
            }
            UnaryOp::Softplus => sigmoid(x),
            UnaryOp::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryOp::Scale(c) => c,
            UnaryOp::Shift(_) => 1.0,
        }
    }
}

/// Elementwise binary op with trailing-dimension broadcasting.
fn broadcast_apply(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::ShapeMismatch {
        op: op.name(),
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<f64> = if a.shape() == b.shape() {
        ad.iter().zip(bd).map(|(&x, &y)| op.apply(x, y)).collect()
    } else if b.numel() == 1 && shape.as_slice() == a.shape() {
        let y = bd[0];
        ad.iter().map(|&x| op.apply(x, y)).collect()
    } else if a.numel() == 1 && shape.as_slice() == b.shape() {
        let x = ad[0];
        bd.iter().map(|&y| op.apply(x, y)).collect()
    } else {
        let ma = broadcast_index_map(a.shape(), &shape);
        let mb = broadcast_index_map(b.shape(), &shape);
        ma.iter().zip(&mb).map(|(&i, &j)| op.apply(ad[i], bd[j])).collect()
    };
    Ok(Tensor::from_parts(shape, data))
}

impl Tape {
    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if op == BinaryOp::Div && bv.data().iter().any(|&x| x == 0.0) {
            return Err(Error::DivisionByZero("div"));
        }
        let out = broadcast_apply(op, av, bv)?;
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        let backward = Box::new(move |inp: &[&Tensor], _out: &Tensor, g: &Tensor| {
            let (ga, gb) = match op {
                BinaryOp::Add => (g.clone(), g.clone()),
                BinaryOp::Sub => (g.clone(), g.scale(-1.0)),
                BinaryOp::Mul => (
                    broadcast_apply(BinaryOp::Mul, g, inp[1])?,
                    broadcast_apply(BinaryOp::Mul, g, inp[0])?,
                ),
                BinaryOp::Div => {
                    let ga = broadcast_apply(BinaryOp::Div, g, inp[1])?;
                    // d(a/b)/db = -a/b^2
                    let b2 = inp[1].map(|x| x * x);
                    let q = broadcast_apply(BinaryOp::Div, inp[0], &b2)?;
                    let gb = broadcast_apply(BinaryOp::Mul, g, &q)?.scale(-1.0);
                    (ga, gb)
                }
            };
            Ok(vec![
                Some(reduce_to_shape(&ga, &sa)),
                Some(reduce_to_shape(&gb, &sb)),
            ])
        });
        self.push(op.name(), out, &[a, b], backward)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let av = self.value(a);
        if op == UnaryOp::Sqrt && av.data().iter().any(|&x| x < 0.0) {
            return Err(Error::NonFinite("sqrt of negative value".into()));
        }
        if let UnaryOp::Clamp(lo, hi) = op {
            if lo > hi {
                return Err(Error::Config(format!("clamp bounds {lo} > {hi}")));
            }
        }
        let out = av.map(|x| op.apply(x));
        let backward = Box::new(move |inp: &[&Tensor], out: &Tensor, g: &Tensor| {
            let data = inp[0]
                .data()
                .iter()
                .zip(out.data())
                .zip(g.data())
                .map(|((&x, &y), &gy)| gy * op.derivative(x, y))
                .collect();
            Ok(vec![Some(Tensor::from_parts(g.shape().to_vec(), data))])
        });
        self.push(op.name(), out, &[a], backward)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    /// Binary op against a scalar constant.
    pub fn binary_scalar(&mut self, op: BinaryOp, a: Var, s: f64) -> Result<Var> {
        match op {
            BinaryOp::Add => self.unary(UnaryOp::Shift(s), a),
            BinaryOp::Sub => self.unary(UnaryOp::Shift(-s), a),
            BinaryOp::Mul => self.unary(UnaryOp::Scale(s), a),
            BinaryOp::Div => {
                if s == 0.0 {
                    return Err(Error::DivisionByZero("div"));
                }
                self.unary(UnaryOp::Scale(1.0 / s), a)
            }
        }
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Abs, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sqrt, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, a)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(UnaryOp::Clamp(lo, hi), a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(UnaryOp::Scale(c), a)
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(UnaryOp::Shift(c), a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Silu, a)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Gelu, a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Softplus, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vals(t: &Tape, v: Var) -> Vec<f64> {
        t.value(v).data().to_vec()
    }

    #[test]
    fn add_componentwise() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let b = t.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let c = t.add(a, b).unwrap();
        assert_eq!(vals(&t, c), vec![4.0, 6.0]);
    }

    #[test]
    fn mul_by_one_is_exact() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_vec(vec![0.1, -3.7, 1e-300, 12345.678]));
        let y = t.binary_scalar(BinaryOp::Mul, x, 1.0).unwrap();
        assert_eq!(vals(&t, x), vals(&t, y));
    }

    #[test]
    fn exp_matches_libm() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_vec(vec![0.0, 2f64.ln()]));
        let y = t.exp(x).unwrap();
        let v = vals(&t, y);
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!((v[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn division_by_zero_errors() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let b = t.constant(Tensor::from_vec(vec![1.0, 0.0]));
        assert!(matches!(t.div(a, b), Err(Error::DivisionByZero(_))));
        assert!(t.binary_scalar(BinaryOp::Div, a, 0.0).is_err());
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let b = t.constant(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(t.add(a, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn sqrt_of_negative_errors() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_vec(vec![-1.0]));
        assert!(t.sqrt(a).is_err());
    }

    #[test]
    fn broadcast_equals_tiling() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = t.constant(Tensor::from_vec(vec![10., 20., 30.]));
        let tiled = t.constant(Tensor::new(vec![2, 3], vec![10., 20., 30., 10., 20., 30.]).unwrap());
        let c1 = t.mul(a, b).unwrap();
        let c2 = t.mul(a, tiled).unwrap();
        assert_eq!(vals(&t, c1), vals(&t, c2));
    }
}
