use crate::model::{RestorationNet, FULL_PRECISION_BITS};
use crate::ssm::ParamKind;
use std::collections::HashSet;

/// Parameter and multiply-accumulate counts where an `n`-bit quantity
/// counts as `n/32` of a full-precision one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexityReport {
    pub params_full: f64,
    pub params_effective: f64,
    pub ops_full: f64,
    pub ops_effective: f64,
}

impl ComplexityReport {
    /// `1 - effective/full` for parameters.
    pub fn params_reduction(&self) -> f64 {
        1.0 - self.params_effective / self.params_full
    }

    pub fn ops_reduction(&self) -> f64 {
        1.0 - self.ops_effective / self.ops_full
    }
}

/// Counts the network for an `h×w` input at bit-widths `bits`
/// (`(32, 32)` for full precision).
///
/// Body weights count `w/32` each; biases, norms, scan parameters and the
/// shallow and head layers count in full. Ops that consume a body weight
/// count `max(w, a)/32` of their MACs; the scans and the shallow and head
/// convolutions count in full. Quantizer state is not counted.
pub fn count_complexity(net: &RestorationNet, h: usize, w: usize, bits: (u32, u32)) -> ComplexityReport {
    let (wb, ab) = bits;
    let w_scale = wb.min(FULL_PRECISION_BITS) as f64 / 32.0;
    let op_scale = wb.max(ab).min(FULL_PRECISION_BITS) as f64 / 32.0;
    let body: HashSet<&str> = net
        .specs
        .iter()
        .filter(|s| s.kind == ParamKind::Weight)
        .map(|s| s.name.as_str())
        .collect();

    let (mut pf, mut pe) = (0.0, 0.0);
    for s in &net.specs {
        let n = s.shape.iter().product::<usize>() as f64;
        pf += n;
        pe += if body.contains(s.name.as_str()) { n * w_scale } else { n };
    }
    let (mut of, mut oe) = (0.0, 0.0);
    for op in net.op_census(h, w) {
        let m = op.macs as f64;
        of += m;
        oe += match &op.weight {
            Some(wn) if body.contains(wn.as_str()) => m * op_scale,
            _ => m,
        };
    }
    ComplexityReport {
        params_full: pf,
        params_effective: pe,
        ops_full: of,
        ops_effective: oe,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig, Task};

    #[test]
    fn full_precision_has_no_reduction() {
        let net = build_model(&ModelConfig::new(Task::LightSr), 0).unwrap();
        let r = count_complexity(&net, 32, 32, (32, 32));
        assert_eq!(r.params_full, net.param_count() as f64);
        assert_eq!(r.params_reduction(), 0.0);
        assert_eq!(r.ops_reduction(), 0.0);
    }

    #[test]
    fn reduction_grows_as_bits_shrink() {
        let net = build_model(&ModelConfig::new(Task::LightSr), 0).unwrap();
        let r8 = count_complexity(&net, 16, 16, (8, 8));
        let r4 = count_complexity(&net, 16, 16, (4, 4));
        let r2 = count_complexity(&net, 16, 16, (2, 2));
        assert!(r8.params_reduction() < r4.params_reduction());
        assert!(r4.params_reduction() < r2.params_reduction());
        assert!(r8.ops_reduction() < r4.ops_reduction() && r4.ops_reduction() < r2.ops_reduction());
        assert!(r2.params_reduction() < 1.0);
    }
}
