//! Randomized invariants across the library.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use qssm::metrics::{count_complexity, psnr, ssim};
use qssm::model::{build_model, quantize_model, ModelConfig, Task};
use qssm::quant::rfa::RfaParams;
use qssm::quant::{
    compute_stats, dls_quantize, dls_scale_shift, init_rfa, pack_weights, quantize_uniform, rfa_forward,
    unpack_weights, DlsParams, PackedWeights, UniformQuantConfig,
};
use qssm::ssm::{build_kernel, discretize_zoh, ssm_conv, ssm_recurrence, DiscreteSsm, Init, ParamKind, ParamSpec};
use qssm::ssm::{Rssb, ScanOrder, SsmParams, VarMap};
use qssm::train::{lr_at, Dihedral, TrainPreset};
use qssm::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bits() -> impl Strategy<Value = u32> {
    prop_oneof![Just(2u32), Just(4), Just(8)]
}

fn vals(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

fn rand_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    Tensor::rand_uniform(shape, lo, hi, &mut ChaCha8Rng::seed_from_u64(seed))
}

// Tensors and the tape

proptest! {
    #[test]
    fn broadcast_matches_tiling(rows in 1usize..5, cols in 1usize..6, seed in any::<u64>(), op in 0usize..3) {
        let a = rand_tensor(&[rows, cols], -2.0, 2.0, seed);
        let b = rand_tensor(&[cols], -2.0, 2.0, seed ^ 1);
        let tiled = Tensor::new(vec![rows, cols], b.data().repeat(rows)).unwrap();
        let mut t = Tape::new();
        let (va, vb, vt) = (t.constant(a), t.constant(b), t.constant(tiled));
        let run = |t: &mut Tape, x, y| match op {
            0 => t.add(x, y),
            1 => t.sub(x, y),
            _ => t.mul(x, y),
        };
        let broadcast = run(&mut t, va, vb).unwrap();
        let explicit = run(&mut t, va, vt).unwrap();
        prop_assert_eq!(t.value(broadcast), t.value(explicit));
    }

    #[test]
    fn backward_twice_doubles(x in vals(1..12)) {
        let mut t = Tape::new();
        let v = t.param(Tensor::from_vec(x));
        let s = t.square(v).unwrap();
        let e = t.sigmoid(s).unwrap();
        let l = t.sum(e).unwrap();
        t.backward(l).unwrap();
        let first = t.grad(v).unwrap().clone();
        t.backward(l).unwrap();
        for (a, b) in first.data().iter().zip(t.grad(v).unwrap().data()) {
            prop_assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn unary_gradients_match_central_differences(x in prop::collection::vec(-2.0f64..2.0, 1..8), op in 0usize..6) {
        let f = |t: &mut Tape, v| match op {
            0 => t.exp(v),
            1 => t.square(v),
            2 => t.sigmoid(v),
            3 => t.silu(v),
            4 => t.gelu(v),
            _ => t.softplus(v),
        };
        let eval = |xs: &[f64]| {
            let mut t = Tape::new();
            let v = t.constant(Tensor::from_vec(xs.to_vec()));
            let y = f(&mut t, v).unwrap();
            t.value(y).sum()
        };
        let mut t = Tape::new();
        let v = t.param(Tensor::from_vec(x.clone()));
        let y = f(&mut t, v).unwrap();
        let l = t.sum(y).unwrap();
        t.backward(l).unwrap();
        let g = t.grad(v).unwrap().data().to_vec();
        let h = 1e-5;
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (eval(&p) - eval(&m)) / (2.0 * h);
            let err = (fd - g[i]).abs();
            prop_assert!(err < 1e-6 || err / fd.abs() < 1e-4, "op {op} at {}: {fd} vs {}", x[i], g[i]);
        }
    }
}

// Quantizers

proptest! {
    #[test]
    fn uniform_grid_spacing_and_cardinality(
        n in bits(),
        alpha in 0.5f64..50.0,
        beta in -2.0f64..2.0,
        offset in 0.0f64..1.0,
    ) {
        let cfg = UniformQuantConfig::new(n, alpha, beta).unwrap();
        let half = (1u64 << (n - 1)) as f64;
        // Sweep past both clip edges in steps of a fifth of the grid spacing.
        let xs: Vec<f64> = (0..(2.0 * half + 4.0) as usize * 5)
            .map(|k| beta + (-half - 2.0 + (k as f64 + offset) / 5.0) / alpha)
            .collect();
        let q = quantize_uniform(&Tensor::from_vec(xs), &cfg).unwrap();
        let mut distinct: Vec<f64> = q.data().to_vec();
        distinct.dedup();
        prop_assert_eq!(distinct.len(), 1usize << n);
        let scale = 1.0 + distinct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for p in distinct.windows(2) {
            prop_assert!(((p[1] - p[0]) - 1.0 / alpha).abs() < 1e-12 * scale, "{} {}", p[0], p[1]);
        }
    }

    #[test]
    fn uniform_is_monotone_and_idempotent(
        n in bits(),
        alpha in 0.1f64..100.0,
        beta in -2.0f64..2.0,
        mut xs in vals(1..64),
    ) {
        xs.sort_by(f64::total_cmp);
        let cfg = UniformQuantConfig::new(n, alpha, beta).unwrap();
        let q = quantize_uniform(&Tensor::from_vec(xs), &cfg).unwrap();
        prop_assert!(q.data().windows(2).all(|p| p[0] <= p[1]));
        prop_assert_eq!(quantize_uniform(&q, &cfg).unwrap(), q);
    }

    #[test]
    fn rfa_midpoints_pick_the_nearest_level(w in vals(2..40), n in bits(), probes in prop::collection::vec(-4.0f64..4.0, 1..64)) {
        let wt = Tensor::from_vec(w);
        prop_assume!(wt.max() - wt.min() > 1e-3);
        let p = init_rfa(&wt, n).unwrap();
        let q = rfa_forward(&Tensor::from_vec(probes.clone()), &p).unwrap();
        for (&x, &got) in probes.iter().zip(q.data()) {
            let mut d: Vec<f64> = p.levels.iter().map(|l| (l - x).abs()).collect();
            d.sort_by(f64::total_cmp);
            if d[1] - d[0] < 1e-12 {
                continue;
            }
            prop_assert!(((got - x).abs() - d[0]).abs() < 1e-15, "{x} -> {got}");
        }
    }

    #[test]
    fn rfa_forward_is_monotone(w in vals(2..40), n in bits(), jitter in prop::collection::vec(-0.4f64..0.4, 256), mut xs in vals(1..64)) {
        let wt = Tensor::from_vec(w);
        prop_assume!(wt.max() - wt.min() > 1e-3);
        let mut p = init_rfa(&wt, n).unwrap();
        let step = p.step();
        for (t, j) in p.thresholds.iter_mut().zip(&jitter) {
            *t += j * step;
        }
        RfaParams::project_thresholds(&mut p.thresholds, step);
        xs.sort_by(f64::total_cmp);
        let q = rfa_forward(&Tensor::from_vec(xs), &p).unwrap();
        prop_assert!(q.data().windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn rfa_slope_is_bounded_and_piecewise(w in vals(2..40), n in prop_oneof![Just(2u32), Just(4)], jitter in prop::collection::vec(-0.4f64..0.4, 16)) {
        let wt = Tensor::from_vec(w);
        prop_assume!(wt.max() - wt.min() > 1e-3);
        let mut p = init_rfa(&wt, n).unwrap();
        let step = p.step();
        for (t, j) in p.thresholds.iter_mut().zip(&jitter) {
            *t += j * step;
        }
        RfaParams::project_thresholds(&mut p.thresholds, step);
        let t = &p.thresholds;
        let k = t.len();
        let width = |i: usize| if i + 1 < k { t[i + 1] - t[i] } else { t[k - 1] - t[k - 2] };
        let (lo, hi) = (t[0] - 2.0 * step, t[k - 1] + 2.0 * step);
        let samples = 20_000;
        for s in 0..=samples {
            let x = lo + (hi - lo) * s as f64 / samples as f64;
            let got = p.slope(x).value;
            if x < t[0] {
                prop_assert_eq!(got, p.fixed_slope);
                continue;
            }
            let adaptive = step / width(p.interval(x));
            prop_assert!(got == p.fixed_slope || got == adaptive, "slope {got} at {x}");
            prop_assert!(got >= p.fixed_slope.min(adaptive) && got <= p.fixed_slope.max(adaptive));
        }
    }

    #[test]
    fn dls_range_follows_the_input(
        w1 in prop::array::uniform4(-2.0f64..2.0),
        w2 in prop::array::uniform4(-2.0f64..2.0),
        x in vals(4..40),
        y in vals(4..40),
        n in bits(),
    ) {
        let p = DlsParams { w1, w2 };
        let (tx, ty) = (Tensor::from_vec(x), Tensor::from_vec(y));
        let (px, ppx) = compute_stats(&tx).unwrap();
        let (py, ppy) = compute_stats(&ty).unwrap();
        prop_assume!(px != py);
        let manual = |phi: [f64; 4], phi_p: [f64; 4]| {
            let a: f64 = (0..4).map(|i| w1[i] * phi_p[i]).sum();
            let b: f64 = (0..4).map(|i| w2[i] * phi[i]).sum();
            (a.abs(), b)
        };
        let (ax, bx) = dls_scale_shift(&px, &ppx, &p);
        let (ay, by) = dls_scale_shift(&py, &ppy, &p);
        prop_assert_eq!((ax, bx), manual(px.to_array(), ppx.to_array()));
        prop_assert_eq!((ay, by), manual(py.to_array(), ppy.to_array()));
        prop_assume!(ax > 1e-6 && ay > 1e-6);
        let qx = dls_quantize(&tx, &p, n).unwrap();
        prop_assert_eq!(qx, quantize_uniform(&tx, &UniformQuantConfig::new(n, ax, bx).unwrap()).unwrap());
        // Generic projections separate inputs whose statistics differ.
        let generic = w1.iter().chain(&w2).all(|v| v.abs() > 1e-3);
        if generic && (px.to_array().iter().zip(py.to_array()).all(|(a, b)| (a - b).abs() > 1e-6)) {
            prop_assert!(ax != ay || bx != by);
        }
    }

    #[test]
    fn stats_are_ordered(x in vals(1..64)) {
        let (phi, phi_p) = compute_stats(&Tensor::from_vec(x)).unwrap();
        prop_assert!(phi.xmin <= phi.mu && phi.mu <= phi.xmax);
        prop_assert!(phi.sigma >= 0.0);
        prop_assert_eq!(phi_p.mu, phi.mu.abs());
    }

    #[test]
    fn packing_is_a_bijection(n in bits(), idx in prop::collection::vec(any::<u16>(), 1..100), lo in -1.0f64..0.0, span in 0.1f64..2.0) {
        let count = 1usize << n;
        let levels: Vec<f64> = (0..count).map(|i| lo + span * i as f64 / (count - 1) as f64).collect();
        let w = Tensor::from_vec(idx.iter().map(|&i| levels[i as usize % count]).collect());
        let packed = pack_weights(&w, &levels, n).unwrap();
        prop_assert_eq!(packed.bitstream.len(), (n as usize * w.numel()).div_ceil(8));
        prop_assert_eq!(unpack_weights(&packed).unwrap(), w.clone());
        let (back, used) = PackedWeights::from_bytes(&packed.to_bytes()).unwrap();
        prop_assert_eq!(used, packed.byte_len());
        prop_assert_eq!(&back, &packed);
        // Every well-formed bitstream decodes to a grid tensor that packs back to itself.
        let stream: Vec<u8> = idx.iter().map(|&i| i as u8).chain(std::iter::repeat(0)).take(packed.bitstream.len()).collect();
        let mut raw = PackedWeights { bitstream: stream, ..packed };
        let tail = raw.bitstream.len() * 8 - n as usize * w.numel();
        if tail > 0 {
            let last = raw.bitstream.len() - 1;
            raw.bitstream[last] &= 0xFFu8 >> tail;
        }
        let decoded = unpack_weights(&raw).unwrap();
        prop_assert_eq!(pack_weights(&decoded, &levels, n).unwrap(), raw);
    }
}

// State-space core

fn random_system(n: usize, seed: u64) -> (DiscreteSsm, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = |rng: &mut ChaCha8Rng, k: usize, s: f64| Tensor::rand_uniform(&[k], -s, s, rng).into_data();
    let abar = DMatrix::from_vec(n, n, r(&mut rng, n * n, 0.9 / n as f64));
    let bbar = DVector::from_vec(r(&mut rng, n, 1.0));
    let c = DVector::from_vec(r(&mut rng, n, 1.0));
    (DiscreteSsm { abar, bbar }, c)
}

proptest! {
    #[test]
    fn recurrence_equals_kernel_convolution(n in 1usize..=4, x in vals(1..33), d in -1.0f64..1.0, seed in any::<u64>()) {
        let (disc, c) = random_system(n, seed);
        let rec = ssm_recurrence(&x, &disc, &c, d, None).unwrap();
        let conv = ssm_conv(&x, &build_kernel(&disc, &c, x.len()), d).unwrap();
        for (a, b) in rec.iter().zip(&conv) {
            prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn stable_diagonal_discretizes_inside_unit_disc(a in prop::collection::vec(-20.0f64..-1e-3, 1..6), delta in 1e-3f64..10.0) {
        let n = a.len();
        let p = SsmParams::diagonal(&a, &vec![1.0; n], &vec![1.0; n], 0.0, delta).unwrap();
        let disc = discretize_zoh(&p).unwrap();
        for i in 0..n {
            prop_assert!(disc.abar[(i, i)].abs() < 1.0);
        }
    }

    #[test]
    fn stable_dense_has_spectral_radius_below_one(n in 2usize..5, seed in any::<u64>(), delta in 1e-2f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let skew = DMatrix::from_vec(n, n, Tensor::rand_uniform(&[n * n], -1.0, 1.0, &mut rng).into_data());
        let damp = Tensor::rand_uniform(&[n], 0.1, 2.0, &mut rng).into_data();
        // Negative-definite symmetric part keeps every eigenvalue in the left half-plane.
        let a = (&skew - skew.transpose()) / 2.0 - DMatrix::from_diagonal(&DVector::from_vec(damp));
        let p = SsmParams::new(a, DVector::from_element(n, 1.0), DVector::from_element(n, 1.0), 0.0, delta).unwrap();
        let disc = discretize_zoh(&p).unwrap();
        let radius = disc.abar.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(radius < 1.0, "spectral radius {radius}");
    }

    #[test]
    fn scan_orders_are_bijections(h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let plane = rand_tensor(&[h * w], -1.0, 1.0, seed).into_data();
        let mut perms = Vec::new();
        for order in ScanOrder::ALL {
            let seq = order.flatten(&plane, h, w);
            prop_assert_eq!(order.unflatten(&seq, h, w), plane.clone());
            prop_assert_eq!(order.flatten(&order.unflatten(&seq, h, w), h, w), seq);
            let mut p = order.permutation(h, w);
            perms.push(p.clone());
            p.sort_unstable();
            prop_assert_eq!(p, (0..h * w).collect::<Vec<_>>());
        }
        if h * w > 1 {
            for i in 0..4 {
                for j in i + 1..4 {
                    // Row and column orders coincide on a single row or column.
                    let degenerate = (h == 1 || w == 1) && (i % 2 == j % 2);
                    if !degenerate {
                        prop_assert_ne!(&perms[i], &perms[j]);
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn residual_block_with_zero_weights_is_identity(c in prop_oneof![Just(4usize), Just(8)], state in 1usize..5, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blk = Rssb::new("b", c, state).unwrap();
        let specs: Vec<ParamSpec> = blk
            .param_specs()
            .into_iter()
            .map(|mut s| {
                s.init = match s.kind {
                    ParamKind::Weight => Init::Const(0.0),
                    ParamKind::Full => Init::KaimingUniform { fan_in: 4 },
                };
                s
            })
            .collect();
        let mut tape = Tape::new();
        let mut src = VarMap::from_specs(&mut tape, &specs, &mut rng);
        let x = tape.constant(Tensor::rand_uniform(&[c, h, w], -1.0, 1.0, &mut rng));
        let y = blk.forward(&mut tape, &mut src, x).unwrap();
        prop_assert_eq!(tape.value(y), tape.value(x));
    }
}

// Model

fn small(task: Task) -> ModelConfig {
    let mut cfg = ModelConfig::new(task);
    cfg.blocks = 1;
    cfg.channels = 8;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn eight_bit_model_tracks_full_precision(seed in any::<u64>(), task in prop_oneof![Just(Task::Denoise), Just(Task::LightSr)]) {
        let net = build_model(&small(task), seed).unwrap();
        let calib = rand_tensor(&[3, 16, 16], 0.0, 1.0, seed ^ 7);
        let q = quantize_model(&net, 8, 8, &[calib]).unwrap();
        let img = rand_tensor(&[3, 12, 12], 0.0, 1.0, seed ^ 11);
        let (a, b) = (net.infer(&img).unwrap(), q.infer(&img).unwrap());
        let mad = a.data().iter().zip(b.data()).map(|(u, v)| (u - v).abs()).sum::<f64>() / a.numel() as f64;
        prop_assert!(mad < 0.1, "mean absolute difference {mad}");
    }

    #[test]
    fn quantization_leaves_outer_parameters_alone(seed in any::<u64>(), n in bits()) {
        let net = build_model(&small(Task::LightSr), seed).unwrap();
        let q = quantize_model(&net, n, n, &[rand_tensor(&[3, 16, 16], 0.0, 1.0, seed)]).unwrap();
        prop_assert_eq!(&q.specs, &net.specs);
        let outside = |m: &qssm::model::RestorationNet| -> usize {
            m.specs.iter().filter(|s| s.kind == ParamKind::Full).map(|s| s.shape.iter().product::<usize>()).sum()
        };
        prop_assert_eq!(outside(&q), outside(&net));
        for s in net.specs.iter().filter(|s| s.kind == ParamKind::Full) {
            prop_assert_eq!(q.store.get(&s.name).unwrap(), net.store.get(&s.name).unwrap());
            prop_assert!(!q.weight_quant.contains_key(&s.name));
        }
        prop_assert_eq!(q.weight_quant.len(), net.body_weights().len());
    }

    #[test]
    fn complexity_at_full_precision_is_the_census(h in 4usize..40, w in 4usize..40, task in prop_oneof![Just(Task::Denoise), Just(Task::LightSr)]) {
        let net = build_model(&small(task), 0).unwrap();
        let r = count_complexity(&net, h, w, (32, 32));
        prop_assert_eq!(r.params_full, net.param_count() as f64);
        prop_assert_eq!(r.params_effective, r.params_full);
        let macs: u64 = net.op_census(h, w).iter().map(|o| o.macs).sum();
        prop_assert_eq!(r.ops_full, macs as f64);
        prop_assert_eq!(r.ops_effective, r.ops_full);
        let mut last = (0.0, 0.0);
        for b in [8u32, 4, 2] {
            let r = count_complexity(&net, h, w, (b, b));
            prop_assert!(r.params_reduction() > last.0 && r.ops_reduction() > last.1);
            last = (r.params_reduction(), r.ops_reduction());
        }
    }
}

// Training utilities

proptest! {
    #[test]
    fn lr_schedule_steps_down(mut ms in prop::collection::btree_set(1usize..500, 0..6), base in 1e-5f64..1e-2) {
        let mut preset = TrainPreset::for_task(Task::LightSr);
        preset.milestones = std::mem::take(&mut ms).into_iter().collect();
        preset.base_lr = base;
        let lrs: Vec<f64> = (0..520).map(|i| lr_at(i, &preset)).collect();
        prop_assert!(lrs.windows(2).all(|p| p[1] <= p[0]));
        let mut plateaus = lrs.clone();
        plateaus.dedup();
        prop_assert_eq!(plateaus.len(), preset.milestones.len() + 1);
        prop_assert_eq!(lrs[0], base);
    }

    #[test]
    fn dihedral_group_is_closed(a in 0usize..8, b in 0usize..8, c in 1usize..3, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let all = Dihedral::all();
        let (g, k) = (all[a], all[b]);
        let gk = g.then(k);
        prop_assert!(all.contains(&gk));
        let x = rand_tensor(&[c, h, w], 0.0, 1.0, seed);
        prop_assert_eq!(gk.apply(&x).unwrap(), k.apply(&g.apply(&x).unwrap()).unwrap());
    }
}

// Metrics

proptest! {
    #[test]
    fn psnr_symmetry_offset_and_order(h in 2usize..12, w in 2usize..12, seed in any::<u64>(), offset in -0.5f64..0.5, gain in 1.01f64..3.0) {
        let a = rand_tensor(&[h, w], 0.2, 0.8, seed);
        let b = rand_tensor(&[h, w], 0.2, 0.8, seed ^ 3);
        prop_assume!(a != b);
        let p = psnr(&a, &b, 0).unwrap();
        prop_assert_eq!(p, psnr(&b, &a, 0).unwrap());
        let shifted = psnr(&a.map(|v| v + offset), &b.map(|v| v + offset), 0).unwrap();
        prop_assert!((shifted - p).abs() < 1e-9, "{p} vs {shifted}");
        // Scaling the error field by `gain` raises the MSE, so PSNR must fall.
        let worse = a.zip_map(&b, |x, y| x + gain * (y - x)).unwrap();
        prop_assert!(psnr(&a, &worse, 0).unwrap() < p);
    }

    #[test]
    fn ssim_identity_and_symmetry(h in 11usize..20, w in 11usize..20, seed in any::<u64>()) {
        let a = rand_tensor(&[h, w], 0.0, 1.0, seed);
        let b = rand_tensor(&[h, w], 0.0, 1.0, seed ^ 5);
        prop_assert!((ssim(&a, &a, 0).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((ssim(&a, &b, 0).unwrap() - ssim(&b, &a, 0).unwrap()).abs() < 1e-12);
    }
}
