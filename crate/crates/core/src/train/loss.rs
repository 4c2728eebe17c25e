use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CHARBONNIER_EPS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1,
    Charbonnier,
}

fn check(tape: &Tape, pred: Var, gt: Var) -> Result<()> {
    if tape.shape(pred) != tape.shape(gt) {
        return Err(Error::ShapeMismatch {
            op: "loss",
            lhs: tape.shape(pred).to_vec(),
            rhs: tape.shape(gt).to_vec(),
        });
    }
    Ok(())
}

/// Mean absolute error.
pub fn l1_loss(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
    check(tape, pred, gt)?;
    let d = tape.sub(pred, gt)?;
    let a = tape.abs(d)?;
    tape.mean(a)
}

/// Mean of `sqrt((pred - gt)² + ε²)`.
pub fn charbonnier_loss(tape: &mut Tape, pred: Var, gt: Var, eps: f64) -> Result<Var> {
    check(tape, pred, gt)?;
    let d = tape.sub(pred, gt)?;
    let s = tape.square(d)?;
    let s = tape.shift(s, eps * eps)?;
    let r = tape.sqrt(s)?;
    tape.mean(r)
}

pub fn loss(tape: &mut Tape, kind: LossKind, pred: Var, gt: Var) -> Result<Var> {
    match kind {
        LossKind::L1 => l1_loss(tape, pred, gt),
        LossKind::Charbonnier => charbonnier_loss(tape, pred, gt, CHARBONNIER_EPS),
    }
}
