use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;
use std::collections::{BTreeMap, HashMap};

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: HashMap::new(),
        }
    }
}

impl Adam {
    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Updates every store entry that has a gradient. Entries without one
    /// keep their value and moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, g) in grads {
            let p = store.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let n = g.numel();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
