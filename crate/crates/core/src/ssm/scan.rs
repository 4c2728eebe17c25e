//! Flattening orders for 2-D feature maps and the four-direction scan.

use super::linear::{ssm_recurrence, DiscreteSsm};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use nalgebra::DVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanOrder {
    RowForward,
    RowBackward,
    ColForward,
    ColBackward,
}

impl ScanOrder {
    pub const ALL: [ScanOrder; 4] = [
        ScanOrder::RowForward,
        ScanOrder::RowBackward,
        ScanOrder::ColForward,
        ScanOrder::ColBackward,
    ];

    /// `perm[t]` is the row-major pixel index visited at step `t`.
    pub fn permutation(self, h: usize, w: usize) -> Vec<usize> {
        let l = h * w;
        let col = |t: usize| (t % h) * w + t / h;
        match self {
            ScanOrder::RowForward => (0..l).collect(),
            ScanOrder::RowBackward => (0..l).rev().collect(),
            ScanOrder::ColForward => (0..l).map(col).collect(),
            ScanOrder::ColBackward => (0..l).rev().map(col).collect(),
        }
    }

    /// The order that visits the transposed map in the same sequence.
    pub fn transposed(self) -> ScanOrder {
        match self {
            ScanOrder::RowForward => ScanOrder::ColForward,
            ScanOrder::RowBackward => ScanOrder::ColBackward,
            ScanOrder::ColForward => ScanOrder::RowForward,
            ScanOrder::ColBackward => ScanOrder::RowBackward,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScanOrder::RowForward => "row_fwd",
            ScanOrder::RowBackward => "row_bwd",
            ScanOrder::ColForward => "col_fwd",
            ScanOrder::ColBackward => "col_bwd",
        }
    }

    /// Gathers `plane` (row-major `h×w`) into scan order.
    pub fn flatten(self, plane: &[f64], h: usize, w: usize) -> Vec<f64> {
        self.permutation(h, w).into_iter().map(|p| plane[p]).collect()
    }

    /// Inverse of [`ScanOrder::flatten`].
    pub fn unflatten(self, seq: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; seq.len()];
        for (t, p) in self.permutation(h, w).into_iter().enumerate() {
            out[p] = seq[t];
        }
        out
    }
}

/// Discretized per-channel system used by [`ss2d`].
#[derive(Clone, Debug)]
pub struct ChannelSsm {
    pub disc: DiscreteSsm,
    pub c: DVector<f64>,
    pub d: f64,
}

/// Four-direction scan of a `C×H×W` map with fixed (input-independent)
/// systems: `params[k][ch]` drives channel `ch` along `ScanOrder::ALL[k]`.
/// Direction outputs are summed in the fixed order of `ScanOrder::ALL`.
pub fn ss2d(feature: &Tensor, params: &[Vec<ChannelSsm>; 4]) -> Result<Tensor> {
    let &[c, h, w] = feature.shape() else {
        return Err(Error::InvalidShape {
            shape: feature.shape().to_vec(),
            reason: "ss2d expects C×H×W".into(),
        });
    };
    if h == 0 || w == 0 || params.iter().any(|p| p.len() != c) {
        return Err(Error::Ssm(format!(
            "ss2d needs one system per channel ({c}) in every direction and non-empty H, W"
        )));
    }
    let l = h * w;
    let mut out = vec![0.0; c * l];
    for (k, order) in ScanOrder::ALL.into_iter().enumerate() {
        for ch in 0..c {
            let plane = &feature.data()[ch * l..(ch + 1) * l];
            let sys = &params[k][ch];
            let y = ssm_recurrence(&order.flatten(plane, h, w), &sys.disc, &sys.c, sys.d, None)?;
            for (o, v) in out[ch * l..(ch + 1) * l].iter_mut().zip(order.unflatten(&y, h, w)) {
                *o += v;
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}
