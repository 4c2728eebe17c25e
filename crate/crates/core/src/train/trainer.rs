use super::adam::Adam;
use super::augment::Dihedral;
use super::degrade::{degrade, DegradationSpec};
use super::loss::loss;
use super::preset::TrainPreset;
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::metrics::quality_y;
use crate::model::{thresholds_key, Binder, RestorationNet, Task, WeightQuant};
use crate::quant::RfaParams;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// A training image, optionally with its stored degraded counterpart.
#[derive(Clone, Debug)]
pub struct Sample {
    pub hr: Tensor,
    pub lq: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct ValPair {
    pub lq: Tensor,
    pub gt: Tensor,
}

/// The degradation each task is trained against.
pub fn default_degradation(task: Task, scale: u32) -> DegradationSpec {
    match task {
        Task::ClassicSr | Task::LightSr => DegradationSpec::BicubicDown { scale },
        Task::Denoise => DegradationSpec::GaussianNoise { sigma: 25.0 },
        Task::JpegCar => DegradationSpec::JpegLike { quality: 30 },
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub preset: TrainPreset,
    pub iters: usize,
    pub seed: u64,
    pub degradation: DegradationSpec,
    /// A validation row is logged every this many iterations and after the
    /// last one.
    pub eval_every: usize,
    pub augment: bool,
}

impl TrainOptions {
    pub fn new(preset: TrainPreset, degradation: DegradationSpec, iters: usize, seed: u64) -> Self {
        Self {
            preset,
            iters,
            seed,
            degradation,
            eval_every: 100,
            augment: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub lr: f64,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub psnr_val: f64,
    pub ssim_val: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: RestorationNet,
    pub log: Vec<LogRow>,
    /// Batch loss of every iteration.
    pub losses: Vec<f64>,
}

/// Spatial crop of a `C×H×W` tensor.
pub fn crop(t: &Tensor, y: usize, x: usize, h: usize, w: usize) -> Result<Tensor> {
    let &[c, th, tw] = t.shape() else {
        return Err(Error::InvalidShape {
            shape: t.shape().to_vec(),
            reason: "crop expects C×H×W".into(),
        });
    };
    if y + h > th || x + w > tw {
        return Err(Error::InvalidShape {
            shape: t.shape().to_vec(),
            reason: format!("crop {h}×{w} at ({y}, {x}) exceeds the image"),
        });
    }
    let d = t.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for row in y..y + h {
            let o = (ch * th + row) * tw + x;
            out.extend_from_slice(&d[o..o + w]);
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Trims the bottom and right edges so both sides divide by `s`.
pub fn mod_crop(t: &Tensor, s: usize) -> Result<Tensor> {
    let &[_, h, w] = t.shape() else {
        return crop(t, 0, 0, 0, 0);
    };
    crop(t, 0, 0, h - h % s, w - w % s)
}

/// Validation pairs with deterministic degradations; sample `i` uses seed
/// `seed + i`.
pub fn prepare_val(samples: &[Sample], spec: &DegradationSpec, scale: u32, seed: u64) -> Result<Vec<ValPair>> {
    let s = scale as usize;
    samples
        .iter()
        .enumerate()
        .map(|(i, smp)| {
            let gt = mod_crop(&smp.hr, s)?;
            let lq = match &smp.lq {
                Some(lq) => lq.clone(),
                None => degrade(&gt, spec, seed.wrapping_add(i as u64))?,
            };
            Ok(ValPair { lq, gt })
        })
        .collect()
}

/// Mean luma PSNR and SSIM over the pairs, cropping `border` pixels.
pub fn validate(net: &RestorationNet, pairs: &[ValPair], border: usize) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Dataset("validation set is empty".into()));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for pair in pairs {
        let q = quality_y(&net.infer(&pair.lq)?, &pair.gt, border)?;
        p += q.psnr_db;
        s += q.ssim;
    }
    let n = pairs.len() as f64;
    Ok((p / n, s / n))
}

pub fn val_border(net: &RestorationNet) -> usize {
    if net.cfg.task.is_sr() {
        net.cfg.scale as usize
    } else {
        0
    }
}

/// Draws one `(lq, gt)` training patch: crop, then augment, then degrade
/// unless a stored degraded image exists.
pub fn sample_patch<R: Rng + ?Sized>(
    smp: &Sample,
    gt_size: usize,
    scale: u32,
    spec: &DegradationSpec,
    augment: bool,
    rng: &mut R,
) -> Result<(Tensor, Tensor)> {
    let s = scale as usize;
    if gt_size % s != 0 {
        return Err(Error::Config(format!("gt_size {gt_size} is not divisible by scale {s}")));
    }
    let p = gt_size / s;
    let (_, h, w) = dims(&smp.hr)?;
    let (gh, gw) = (h / s, w / s);
    if gh < p || gw < p {
        return Err(Error::Dataset(format!("image {h}×{w} is smaller than the {gt_size} patch")));
    }
    let py = rng.gen_range(0..=gh - p);
    let px = rng.gen_range(0..=gw - p);
    let g = if augment { Dihedral::sample(rng) } else { Dihedral::IDENTITY };
    let gt = g.apply(&crop(&smp.hr, py * s, px * s, gt_size, gt_size)?)?;
    let lq = match &smp.lq {
        Some(lq) => g.apply(&crop(lq, py, px, p, p)?)?,
        None => degrade(&gt, spec, rng.next_u64())?,
    };
    Ok((lq, gt))
}

fn dims(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref sh => Err(Error::InvalidShape {
            shape: sh.to_vec(),
            reason: "expected C×H×W".into(),
        }),
    }
}

/// Checks that every RFA weight maps onto its level grid and that the
/// thresholds are ordered.
pub fn check_grid(net: &RestorationNet) -> Result<()> {
    for (name, q) in &net.weight_quant {
        if !matches!(q, WeightQuant::Rfa { .. }) {
            continue;
        }
        let p = net.rfa_params(name)?;
        p.check_thresholds()?;
        let w = net.effective_weight(name)?;
        for (i, &v) in w.data().iter().enumerate() {
            if p.levels.binary_search_by(|l| l.total_cmp(&v)).is_err() {
                return Err(Error::OffGrid { index: i, value: v });
            }
        }
    }
    Ok(())
}

fn diverged(iter: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(node) => Error::Diverged { iter, node },
        other => other,
    }
}

/// Quantization-aware training of `net` as it stands (full precision or
/// already wrapped with quantizers). Latent weights, thresholds and
/// activation scalars are updated by Adam; thresholds are re-ordered after
/// every step.
pub fn qat_train(net: &RestorationNet, train: &[Sample], val: &[ValPair], opts: &TrainOptions) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if opts.preset.batch_size == 0 {
        return Err(Error::Config("batch_size must be ≥ 1".into()));
    }
    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::default();
    let border = val_border(&net);
    let batch = opts.preset.batch_size;
    let mut log = Vec::new();
    let mut losses = Vec::with_capacity(opts.iters);
    let mut window = Vec::new();

    for it in 0..opts.iters {
        let lr = opts.preset.lr_at(it);
        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut batch_loss = 0.0;
        for _ in 0..batch {
            let smp = &train[rng.gen_range(0..train.len())];
            let (lq, gt) = sample_patch(smp, opts.preset.gt_size, net.cfg.scale, &opts.degradation, opts.augment, &mut rng)?;
            let mut tape = Tape::new();
            let mut binder = Binder::new(&net, true);
            let step = (|| {
                let y = net.forward(&mut tape, &mut binder, &lq)?;
                let g = tape.constant(gt);
                let l = loss(&mut tape, opts.preset.loss, y, g)?;
                let l = tape.scale(l, 1.0 / batch as f64)?;
                tape.backward(l)?;
                Ok(tape.value(l).item())
            })()
            .map_err(diverged(it))?;
            batch_loss += step;
            for (name, &v) in &binder.leaves {
                if !tape.requires_grad(v) {
                    continue;
                }
                if let Some(g) = tape.take_grad(v) {
                    match grads.get_mut(name) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            grads.insert(name.clone(), g);
                        }
                    }
                }
            }
        }
        adam.step(&mut net.store, &grads, lr)?;
        project_all_thresholds(&mut net)?;
        check_grid(&net)?;

        losses.push(batch_loss);
        window.push(batch_loss);
        if (it + 1) % opts.eval_every.max(1) == 0 || it + 1 == opts.iters {
            let (psnr_val, ssim_val) = if val.is_empty() { (f64::NAN, f64::NAN) } else { validate(&net, val, border)? };
            log.push(LogRow {
                iter: it + 1,
                lr,
                loss: window.iter().sum::<f64>() / window.len() as f64,
                psnr_val,
                ssim_val,
            });
            window.clear();
        }
    }
    Ok(TrainOutcome { net, log, losses })
}

fn project_all_thresholds(net: &mut RestorationNet) -> Result<()> {
    let names: Vec<String> = net
        .weight_quant
        .iter()
        .filter(|(_, q)| matches!(q, WeightQuant::Rfa { .. }))
        .map(|(n, _)| n.clone())
        .collect();
    for name in names {
        let levels = net.store.get(&crate::model::levels_key(&name))?;
        let step = levels.data()[1] - levels.data()[0];
        let thr = net.store.get_mut(&thresholds_key(&name))?;
        RfaParams::project_thresholds(thr.data_mut(), step);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, quantize_model, ModelConfig};
    use crate::train::loss::LossKind;

    fn tiny(task: Task) -> RestorationNet {
        let mut cfg = ModelConfig::new(task);
        cfg.channels = 8;
        cfg.state_size = 2;
        cfg.blocks = 1;
        build_model(&cfg, 3).unwrap()
    }

    fn images(n: usize, size: usize) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..n)
            .map(|_| Sample {
                hr: Tensor::rand_uniform(&[3, size, size], 0.0, 1.0, &mut rng),
                lq: None,
            })
            .collect()
    }

    fn opts(task: Task, iters: usize) -> TrainOptions {
        let mut p = TrainPreset::for_task(task);
        p.gt_size = 16;
        p.batch_size = 1;
        TrainOptions::new(p, default_degradation(task, task.default_scale()), iters, 5)
    }

    #[test]
    fn crop_window() {
        let t = Tensor::new(vec![1, 3, 4], (0..12).map(|v| v as f64).collect()).unwrap();
        assert_eq!(crop(&t, 1, 1, 2, 2).unwrap().data(), &[5., 6., 9., 10.]);
        assert!(crop(&t, 2, 0, 2, 2).is_err());
        assert_eq!(mod_crop(&t, 2).unwrap().shape(), &[1, 2, 4]);
    }

    #[test]
    fn patches_align_with_stored_lr() {
        let hr = images(1, 32).remove(0);
        let lr = degrade(&hr.hr, &DegradationSpec::BicubicDown { scale: 2 }, 0).unwrap();
        let smp = Sample { hr: hr.hr.clone(), lq: Some(lr) };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let (lq, gt) = sample_patch(&smp, 16, 2, &DegradationSpec::BicubicDown { scale: 2 }, true, &mut rng).unwrap();
            assert_eq!(lq.shape(), &[3, 8, 8]);
            assert_eq!(gt.shape(), &[3, 16, 16]);
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let net = tiny(Task::LightSr);
        let out = qat_train(&net, &images(1, 32), &[], &opts(Task::LightSr, 0)).unwrap();
        assert_eq!(out.net.store, net.store);
        assert!(out.log.is_empty());
    }

    #[test]
    fn same_seed_same_loss() {
        let net = tiny(Task::Denoise);
        let data = images(2, 24);
        let calib: Vec<Tensor> = data.iter().map(|s| crop(&s.hr, 0, 0, 16, 16).unwrap()).collect();
        let q = quantize_model(&net, 4, 4, &calib).unwrap();
        let o = opts(Task::Denoise, 3);
        let a = qat_train(&q, &data, &[], &o).unwrap();
        let b = qat_train(&q, &data, &[], &o).unwrap();
        assert_eq!(a.losses.last().unwrap().to_bits(), b.losses.last().unwrap().to_bits());
        assert_eq!(a.net.store, b.net.store);
        assert_ne!(a.net.store, q.store);
        check_grid(&a.net).unwrap();
    }

    #[test]
    fn logs_validation_rows() {
        let net = tiny(Task::LightSr);
        let data = images(2, 32);
        let val = prepare_val(&data, &DegradationSpec::BicubicDown { scale: 2 }, 2, 0).unwrap();
        let mut o = opts(Task::LightSr, 4);
        o.eval_every = 2;
        o.preset.loss = LossKind::Charbonnier;
        let out = qat_train(&net, &data, &val, &o).unwrap();
        assert_eq!(out.log.iter().map(|r| r.iter).collect::<Vec<_>>(), vec![2, 4]);
        assert!(out.log.iter().all(|r| r.psnr_val.is_finite() && r.ssim_val <= 1.0));
    }

    #[test]
    fn divergence_names_node() {
        let mut net = tiny(Task::Denoise);
        let w = net.store.get_mut("head.bias").unwrap();
        w.data_mut()[0] = f64::MAX;
        let err = qat_train(&net, &images(1, 24), &[], &opts(Task::Denoise, 1)).unwrap_err();
        match err {
            Error::Diverged { iter: 0, node } => assert!(!node.is_empty()),
            other => panic!("{other:?}"),
        }
    }
}
