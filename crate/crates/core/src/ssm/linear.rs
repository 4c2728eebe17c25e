//! Linear time-invariant state-space models: zero-order-hold
//! discretization, the sequential recurrence and its convolution-kernel
//! equivalent.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Continuous-time parameters `(A, B, C, D, Δ)` of a single-input,
/// single-output SSM with state size `N`.
#[derive(Clone, Debug)]
pub struct SsmParams {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm {
    pub abar: DMatrix<f64>,
    pub bbar: DVector<f64>,
}

impl SsmParams {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>, d: f64, delta: f64) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n || b.len() != n || c.len() != n {
            return Err(Error::Ssm(format!(
                "inconsistent dimensions: A {}x{}, B {}, C {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len()
            )));
        }
        Ok(Self { a, b, c, d, delta })
    }

    /// Diagonal state matrix given by its diagonal.
    pub fn diagonal(a: &[f64], b: &[f64], c: &[f64], d: f64, delta: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(a)),
            DVector::from_column_slice(b),
            DVector::from_column_slice(c),
            d,
            delta,
        )
    }

    pub fn state_size(&self) -> usize {
        self.a.nrows()
    }

    fn is_diagonal(&self) -> bool {
        let n = self.state_size();
        (0..n).all(|i| (0..n).all(|j| i == j || self.a[(i, j)] == 0.0))
    }
}

/// `(e^x - 1) / x`, stable near zero.
fn phi1(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        1.0 + x / 2.0 + x * x / 6.0
    } else {
        x.exp_m1() / x
    }
}

/// Zero-order hold: `Ā = exp(ΔA)`, `B̄ = (ΔA)⁻¹(exp(ΔA) − I)·ΔB`.
///
/// Below `‖ΔA‖ = 1e-6` the series `I + ΔA/2 + (ΔA)²/6` replaces the
/// inverse; a singular `ΔA` of larger norm goes through the exponential of
/// the augmented matrix `[[ΔA, ΔB], [0, 0]]`.
pub fn discretize_zoh(p: &SsmParams) -> Result<DiscreteSsm> {
    if !(p.delta > 0.0) {
        return Err(Error::Ssm(format!("step size must be positive, got {}", p.delta)));
    }
    let n = p.state_size();
    let da = &p.a * p.delta;
    let db = &p.b * p.delta;

    if p.is_diagonal() {
        let mut abar = DMatrix::zeros(n, n);
        let mut bbar = DVector::zeros(n);
        for i in 0..n {
            let x = da[(i, i)];
            abar[(i, i)] = x.exp();
            bbar[i] = phi1(x) * db[i];
        }
        return Ok(DiscreteSsm { abar, bbar });
    }

    let abar = da.clone().exp();
    let eye = DMatrix::<f64>::identity(n, n);
    let bbar = if da.norm() < 1e-6 {
        (&eye + &da / 2.0 + &da * &da / 6.0) * &db
    } else if let Some(inv) = da.clone().try_inverse() {
        inv * (&abar - &eye) * &db
    } else {
        let mut aug = DMatrix::<f64>::zeros(n + 1, n + 1);
        aug.view_mut((0, 0), (n, n)).copy_from(&da);
        aug.view_mut((0, n), (n, 1)).copy_from(&db);
        let e = aug.exp();
        DVector::from_iterator(n, (0..n).map(|i| e[(i, n)]))
    };
    Ok(DiscreteSsm { abar, bbar })
}

/// Sequential evaluation of `h_t = Ā h_{t-1} + B̄ x_t`, `y_t = C h_t + D x_t`.
pub fn ssm_recurrence(
    x: &[f64],
    disc: &DiscreteSsm,
    c: &DVector<f64>,
    d: f64,
    h0: Option<&DVector<f64>>,
) -> Result<Vec<f64>> {
    let n = disc.abar.nrows();
    if disc.bbar.len() != n || c.len() != n || h0.is_some_and(|h| h.len() != n) {
        return Err(Error::Ssm("recurrence dimension mismatch".into()));
    }
    if x.is_empty() {
        return Err(Error::Ssm("empty input sequence".into()));
    }
    let mut h = h0.cloned().unwrap_or_else(|| DVector::zeros(n));
    Ok(x.iter()
        .map(|&xt| {
            h = &disc.abar * &h + &disc.bbar * xt;
            c.dot(&h) + d * xt
        })
        .collect())
}

/// `K̄[t] = C Ā^t B̄` for `t < len`, by repeated multiplication.
pub fn build_kernel(disc: &DiscreteSsm, c: &DVector<f64>, len: usize) -> Vec<f64> {
    let mut v = disc.bbar.clone();
    let mut k = Vec::with_capacity(len);
    for _ in 0..len {
        k.push(c.dot(&v));
        v = &disc.abar * v;
    }
    k
}

/// Causal convolution `y[t] = Σ_{s≤t} K̄[s]·x[t−s] + D·x[t]`.
pub fn ssm_conv(x: &[f64], kernel: &[f64], d: f64) -> Result<Vec<f64>> {
    if kernel.len() != x.len() {
        return Err(Error::Ssm(format!(
            "kernel length {} differs from sequence length {}",
            kernel.len(),
            x.len()
        )));
    }
    Ok((0..x.len())
        .map(|t| (0..=t).map(|s| kernel[s] * x[t - s]).sum::<f64>() + d * x[t])
        .collect())
}
