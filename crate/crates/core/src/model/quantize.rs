use super::config::{QuantizerKind, FULL_PRECISION_BITS};
use super::net::{dls_keys, levels_key, range_key, thresholds_key, ActQuant, RestorationNet, WeightQuant};
use crate::error::{Error, Result};
use crate::quant::{init_dls, init_rfa, UniformQuantConfig};
use crate::tensor::Tensor;
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QuantCensus {
    pub rfa: usize,
    pub dls: usize,
    pub static_weights: usize,
    pub static_acts: usize,
    pub frozen: usize,
}

impl RestorationNet {
    pub fn quant_census(&self) -> QuantCensus {
        let mut c = QuantCensus::default();
        for q in self.weight_quant.values() {
            match q {
                WeightQuant::Rfa { .. } => c.rfa += 1,
                WeightQuant::Static { .. } => c.static_weights += 1,
                WeightQuant::Frozen { .. } => c.frozen += 1,
            }
        }
        for q in self.act_quant.values() {
            match q {
                ActQuant::Dls { .. } => c.dls += 1,
                ActQuant::Static { .. } => c.static_acts += 1,
            }
        }
        c
    }

    /// Replaces every body weight by its quantized value and drops the
    /// learnable thresholds, so the network carries only level grids and
    /// on-grid weights.
    pub fn freeze_weights(&self) -> Result<RestorationNet> {
        let mut out = self.clone();
        for (name, q) in &self.weight_quant {
            let w_hat = self.effective_weight(name)?;
            match *q {
                WeightQuant::Frozen { .. } => continue,
                WeightQuant::Rfa { bits, .. } => {
                    out.store.remove(&thresholds_key(name));
                    out.weight_quant.insert(name.clone(), WeightQuant::Frozen { bits });
                }
                WeightQuant::Static { bits } => {
                    let ab = out.store.remove(&range_key(name)).expect("range entry").into_data();
                    let (lo, hi) = crate::quant::uniform::int_range(bits);
                    let levels: Vec<f64> = (lo as i64..=hi as i64).map(|k| k as f64 / ab[0] + ab[1]).collect();
                    out.store.insert(levels_key(name), Tensor::from_vec(levels), false)?;
                    out.weight_quant.insert(name.clone(), WeightQuant::Frozen { bits });
                }
            }
            out.store.set(name, w_hat)?;
        }
        Ok(out)
    }
}

/// Wraps body weights and activation sites with quantizers of the
/// configured kind. Weight quantizers are initialized from each tensor,
/// activation quantizers from the activations of `calib` seen through the
/// weight-quantized network. `(32, 32)` returns an unchanged copy.
pub fn quantize_model(net: &RestorationNet, w_bits: u32, a_bits: u32, calib: &[Tensor]) -> Result<RestorationNet> {
    if net.is_quantized() {
        return Err(Error::Quant("network is already quantized".into()));
    }
    let mut q = net.clone();
    q.cfg.bits = Some((w_bits, a_bits));
    q.cfg.validate()?;
    if q.cfg.is_full_precision() {
        return Ok(q);
    }
    if calib.is_empty() {
        return Err(Error::Quant("calibration batch is empty".into()));
    }
    let kind = q.cfg.quantizer;

    if w_bits != FULL_PRECISION_BITS {
        let names: Vec<String> = q.body_weights().iter().map(|s| s.name.clone()).collect();
        for name in names {
            let w = q.store.get(&name)?.clone();
            let degenerate = |e: Error| Error::DegenerateRange {
                site: name.clone(),
                reason: e.to_string(),
            };
            match kind {
                QuantizerKind::Learned => {
                    let p = init_rfa(&w, w_bits).map_err(degenerate)?;
                    q.store.insert(levels_key(&name), Tensor::from_vec(p.levels), false)?;
                    q.store.insert(thresholds_key(&name), Tensor::from_vec(p.thresholds), true)?;
                    let wq = WeightQuant::Rfa {
                        bits: w_bits,
                        fixed_slope: q.cfg.rfa_fixed_slope,
                        rho: q.cfg.rfa_rho,
                    };
                    q.weight_quant.insert(name, wq);
                }
                QuantizerKind::Static => {
                    let u = UniformQuantConfig::from_range(w_bits, w.min(), w.max()).map_err(degenerate)?;
                    q.store.insert(range_key(&name), Tensor::from_vec(vec![u.alpha, u.beta]), false)?;
                    q.weight_quant.insert(name, WeightQuant::Static { bits: w_bits });
                }
            }
        }
    }

    if a_bits != FULL_PRECISION_BITS {
        let sites = q.quant_sites();
        let mut samples: HashMap<String, Vec<f64>> = HashMap::new();
        for img in calib {
            let mut obs = |site: &str, v: &Tensor| {
                if sites.iter().any(|s| s == site) {
                    samples.entry(site.to_string()).or_default().extend_from_slice(v.data());
                }
                None
            };
            q.infer_observed(img, Some(&mut obs))?;
        }
        for site in &sites {
            let sample = Tensor::from_vec(samples.remove(site).unwrap_or_default());
            let degenerate = |e: Error| match e {
                Error::DegenerateRange { reason, .. } => Error::DegenerateRange {
                    site: site.clone(),
                    reason,
                },
                other => Error::DegenerateRange {
                    site: site.clone(),
                    reason: other.to_string(),
                },
            };
            match kind {
                QuantizerKind::Learned => {
                    let p = init_dls(&sample, a_bits, q.cfg.dls_init).map_err(degenerate)?;
                    let (k1, k2) = dls_keys(site);
                    q.store.insert(k1, Tensor::from_vec(p.w1.to_vec()), true)?;
                    q.store.insert(k2, Tensor::from_vec(p.w2.to_vec()), true)?;
                    q.act_quant.insert(site.clone(), ActQuant::Dls { bits: a_bits });
                }
                QuantizerKind::Static => {
                    let u = UniformQuantConfig::from_range(a_bits, sample.min(), sample.max()).map_err(degenerate)?;
                    q.store.insert(range_key(site), Tensor::from_vec(vec![u.alpha, u.beta]), false)?;
                    q.act_quant.insert(site.clone(), ActQuant::Static { bits: a_bits });
                }
            }
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig, Task};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn calib(n: usize) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        (0..n).map(|_| Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut rng)).collect()
    }

    fn small() -> ModelConfig {
        let mut c = ModelConfig::new(Task::LightSr);
        c.channels = 8;
        c
    }

    #[test]
    fn full_precision_sentinel_is_noop() {
        let net = build_model(&small(), 3).unwrap();
        let q = quantize_model(&net, 32, 32, &calib(1)).unwrap();
        assert_eq!(q.quant_census(), QuantCensus::default());
        let img = &calib(1)[0];
        assert_eq!(net.infer(img).unwrap(), q.infer(img).unwrap());
    }

    #[test]
    fn census_matches_structure() {
        let net = build_model(&ModelConfig::new(Task::LightSr), 3).unwrap();
        let q = quantize_model(&net, 4, 4, &calib(2)).unwrap();
        let c = q.quant_census();
        // per block: in_proj, dwconv, 4 x_proj, out_proj, conv1, conv2, fc1, fc2
        assert_eq!(c.rfa, 4 * 11 + 1);
        // per block: ln1, in_proj out, scan in, out_proj in, ln2, cab mid
        assert_eq!(c.dls, 4 * 6 + 1);
    }

    #[test]
    fn weights_take_few_values() {
        let net = build_model(&small(), 5).unwrap();
        for bits in [2u32, 4] {
            let q = quantize_model(&net, bits, bits, &calib(1)).unwrap();
            for spec in q.body_weights() {
                let mut vals: Vec<f64> = q.effective_weight(&spec.name).unwrap().into_data();
                vals.sort_by(f64::total_cmp);
                vals.dedup();
                assert!(vals.len() <= 1 << bits, "{}", spec.name);
            }
        }
    }

    #[test]
    fn freeze_keeps_forward() {
        let net = build_model(&small(), 6).unwrap();
        for kind in [QuantizerKind::Learned, QuantizerKind::Static] {
            let mut n = net.clone();
            n.cfg.quantizer = kind;
            let q = quantize_model(&n, 2, 4, &calib(2)).unwrap();
            let f = q.freeze_weights().unwrap();
            assert_eq!(f.quant_census().frozen, q.body_weights().len());
            let img = &calib(3)[2];
            assert_eq!(q.infer(img).unwrap(), f.infer(img).unwrap());
        }
    }

    #[test]
    fn degenerate_weight_names_layer() {
        let mut net = build_model(&small(), 1).unwrap();
        net.store.set("body.0.ss2d.dwconv", Tensor::zeros(&[8, 1, 3, 3])).unwrap();
        let err = quantize_model(&net, 4, 4, &calib(1)).unwrap_err();
        assert!(err.to_string().contains("body.0.ss2d.dwconv"), "{err}");
    }

    #[test]
    fn bit_width_error_ordering() {
        let net = build_model(&small(), 2).unwrap();
        let cal = calib(2);
        let img = &calib(4)[3];
        let fp = net.infer(img).unwrap();
        let err = |b: u32| {
            let q = quantize_model(&net, b, b, &cal).unwrap();
            let y = q.infer(img).unwrap();
            y.data().iter().zip(fp.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / fp.numel() as f64
        };
        let (e8, e4, e2) = (err(8), err(4), err(2));
        assert!(e8 < e4 && e4 < e2, "{e8} {e4} {e2}");
        assert!(e8 < 0.1);
    }
}
