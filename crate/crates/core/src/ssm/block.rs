//! Residual state-space block: layer norm, four-direction selective scan,
//! channel-attention convolution branch.
//!
//! Blocks hold only dimensions and a name prefix. Parameter values and
//! quantizers are resolved through a [`ParamSource`], so the same forward
//! code serves full-precision and quantized networks.

use super::scan::ScanOrder;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use std::collections::HashMap;

pub const LN_EPS: f64 = 1e-5;
pub const CAB_REDUCTION: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-1/√fan_in, 1/√fan_in)`.
    KaimingUniform { fan_in: usize },
    Const(f64),
    /// `log(1..=N)` along the last axis.
    ALogRange,
    /// Inverse softplus of a log-uniform step size in `[1e-3, 1e-1]`.
    DtBias,
}

impl Init {
    pub fn sample<R: Rng + ?Sized>(self, shape: &[usize], rng: &mut R) -> Tensor {
        let numel: usize = shape.iter().product();
        let data = match self {
            Init::KaimingUniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..numel).map(|_| rng.gen_range(-bound..bound)).collect()
            }
            Init::Const(v) => vec![v; numel],
            Init::ALogRange => {
                let n = *shape.last().unwrap_or(&1);
                (0..numel).map(|i| ((i % n + 1) as f64).ln()).collect()
            }
            Init::DtBias => (0..numel)
                .map(|_| {
                    let dt = (rng.gen_range(1e-3f64.ln()..1e-1f64.ln())).exp();
                    dt + (-(-dt).exp_m1()).ln()
                })
                .collect(),
        };
        Tensor::from_parts(shape.to_vec(), data)
    }
}

/// Whether a parameter goes through the weight quantizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn weight(name: String, shape: Vec<usize>, fan_in: usize) -> Self {
        Self {
            name,
            shape,
            init: Init::KaimingUniform { fan_in },
            kind: ParamKind::Weight,
        }
    }

    pub fn full(name: String, shape: Vec<usize>, init: Init) -> Self {
        Self {
            name,
            shape,
            init,
            kind: ParamKind::Full,
        }
    }
}

/// Resolves parameters and quantizers by fully qualified name.
pub trait ParamSource {
    fn param(&mut self, tape: &mut Tape, name: &str) -> Result<Var>;
    /// A weight after its quantizer, if one is attached.
    fn weight(&mut self, tape: &mut Tape, name: &str) -> Result<Var>;
    /// Activation quantizer at `site`; identity when none is attached.
    fn activation(&mut self, tape: &mut Tape, site: &str, x: Var) -> Result<Var>;
}

/// Plain name-to-variable source with no quantization.
#[derive(Default)]
pub struct VarMap {
    pub vars: HashMap<String, Var>,
}

impl VarMap {
    pub fn from_specs<R: Rng + ?Sized>(tape: &mut Tape, specs: &[ParamSpec], rng: &mut R) -> Self {
        let vars = specs
            .iter()
            .map(|s| (s.name.clone(), tape.param(s.init.sample(&s.shape, rng))))
            .collect();
        Self { vars }
    }

    fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }
}

impl ParamSource for VarMap {
    fn param(&mut self, _: &mut Tape, name: &str) -> Result<Var> {
        self.get(name)
    }

    fn weight(&mut self, _: &mut Tape, name: &str) -> Result<Var> {
        self.get(name)
    }

    fn activation(&mut self, _: &mut Tape, _: &str, x: Var) -> Result<Var> {
        Ok(x)
    }
}

fn chw(tape: &Tape, x: Var) -> Result<(usize, usize, usize)> {
    match *tape.shape(x) {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "expected C×H×W".into(),
        }),
    }
}

/// Gated four-direction selective scan with input and output projections.
#[derive(Clone, Debug)]
pub struct Ss2d {
    pub prefix: String,
    pub channels: usize,
    pub inner: usize,
    pub state: usize,
}

impl Ss2d {
    pub fn new(prefix: impl Into<String>, channels: usize, state: usize) -> Self {
        Self {
            prefix: prefix.into(),
            channels,
            inner: channels,
            state,
        }
    }

    fn name(&self, s: &str) -> String {
        format!("{}.{s}", self.prefix)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (c, e, n) = (self.channels, self.inner, self.state);
        let mut v = vec![
            ParamSpec::weight(self.name("in_proj"), vec![2 * e, c], c),
            ParamSpec::weight(self.name("dwconv"), vec![e, 1, 3, 3], 9),
        ];
        for o in ScanOrder::ALL {
            let k = o.name();
            v.push(ParamSpec::weight(self.name(&format!("x_proj.{k}")), vec![2 * n + e, e], e));
            v.push(ParamSpec::full(self.name(&format!("dt_bias.{k}")), vec![e, 1], Init::DtBias));
            v.push(ParamSpec::full(self.name(&format!("a_log.{k}")), vec![e, n], Init::ALogRange));
            v.push(ParamSpec::full(self.name(&format!("d.{k}")), vec![e], Init::Const(1.0)));
        }
        v.push(ParamSpec::weight(self.name("out_proj"), vec![c, e], e));
        v
    }

    pub fn activation_sites(&self) -> Vec<String> {
        ["in_proj_out", "scan_in", "out_proj_in"].iter().map(|s| self.name(s)).collect()
    }

    pub fn forward(&self, tape: &mut Tape, src: &mut dyn ParamSource, x: Var) -> Result<Var> {
        let (c, h, w) = chw(tape, x)?;
        if c != self.channels {
            return Err(Error::ShapeMismatch {
                op: "ss2d",
                lhs: vec![c, h, w],
                rhs: vec![self.channels],
            });
        }
        let (e, n, l) = (self.inner, self.state, h * w);
        let x2 = tape.reshape(x, &[c, l])?;
        let w_in = src.weight(tape, &self.name("in_proj"))?;
        let xz = tape.matmul(w_in, x2)?;
        let xz = src.activation(tape, &self.name("in_proj_out"), xz)?;
        let xs = tape.narrow0(xz, 0, e)?;
        let z = tape.narrow0(xz, e, 2 * e)?;

        let xs = tape.reshape(xs, &[e, h, w])?;
        let dw = src.weight(tape, &self.name("dwconv"))?;
        let xs = tape.depthwise_conv2d(xs, dw, 1)?;
        let xs = tape.silu(xs)?;
        let u = tape.reshape(xs, &[e, l])?;
        let u = src.activation(tape, &self.name("scan_in"), u)?;

        let mut acc: Option<Var> = None;
        for order in ScanOrder::ALL {
            let k = order.name();
            let wx = src.weight(tape, &self.name(&format!("x_proj.{k}")))?;
            let proj = tape.matmul(wx, u)?;
            let b = tape.narrow0(proj, 0, n)?;
            let cm = tape.narrow0(proj, n, 2 * n)?;
            let dt = tape.narrow0(proj, 2 * n, 2 * n + e)?;
            let bias = src.param(tape, &self.name(&format!("dt_bias.{k}")))?;
            let dt = tape.add(dt, bias)?;
            let delta = tape.softplus(dt)?;
            let a_log = src.param(tape, &self.name(&format!("a_log.{k}")))?;
            let d = src.param(tape, &self.name(&format!("d.{k}")))?;
            let y = tape.selective_scan(u, delta, b, cm, a_log, d, order, h, w)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, y)?,
                None => y,
            });
        }
        let gate = tape.silu(z)?;
        let y = tape.mul(acc.expect("four directions"), gate)?;
        let y = src.activation(tape, &self.name("out_proj_in"), y)?;
        let w_out = src.weight(tape, &self.name("out_proj"))?;
        let out = tape.matmul(w_out, y)?;
        tape.reshape(out, &[c, h, w])
    }
}

/// Convolution branch with squeeze-and-excitation style channel attention.
#[derive(Clone, Debug)]
pub struct Cab {
    pub prefix: String,
    pub channels: usize,
    pub reduction: usize,
}

impl Cab {
    pub fn new(prefix: impl Into<String>, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 || channels < reduction {
            return Err(Error::Config(format!(
                "channel count {channels} is not divisible by reduction {reduction}"
            )));
        }
        Ok(Self {
            prefix: prefix.into(),
            channels,
            reduction,
        })
    }

    fn name(&self, s: &str) -> String {
        format!("{}.{s}", self.prefix)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (c, r) = (self.channels, self.channels / self.reduction);
        vec![
            ParamSpec::weight(self.name("conv1"), vec![c, c, 3, 3], 9 * c),
            ParamSpec::weight(self.name("conv2"), vec![c, c, 3, 3], 9 * c),
            ParamSpec::weight(self.name("ca.fc1"), vec![r, c], c),
            ParamSpec::weight(self.name("ca.fc2"), vec![c, r], r),
        ]
    }

    pub fn activation_sites(&self) -> Vec<String> {
        vec![self.name("mid")]
    }

    pub fn forward(&self, tape: &mut Tape, src: &mut dyn ParamSource, x: Var) -> Result<Var> {
        let (c, _, _) = chw(tape, x)?;
        let k1 = src.weight(tape, &self.name("conv1"))?;
        let t = tape.conv2d(x, k1, 1, 1)?;
        let t = tape.gelu(t)?;
        let t = src.activation(tape, &self.name("mid"), t)?;
        let k2 = src.weight(tape, &self.name("conv2"))?;
        let t = tape.conv2d(t, k2, 1, 1)?;

        let pooled = tape.channel_mean(t)?;
        let pooled = tape.reshape(pooled, &[c, 1])?;
        let f1 = src.weight(tape, &self.name("ca.fc1"))?;
        let s = tape.matmul(f1, pooled)?;
        let s = tape.relu(s)?;
        let f2 = src.weight(tape, &self.name("ca.fc2"))?;
        let s = tape.matmul(f2, s)?;
        let s = tape.sigmoid(s)?;
        let gate = tape.reshape(s, &[c, 1, 1])?;
        tape.mul(t, gate)
    }
}

/// `y = x + s₁·ss2d(LN(x))`, `y′ = y + s₂·cab(LN(y))`.
#[derive(Clone, Debug)]
pub struct Rssb {
    pub prefix: String,
    pub ss2d: Ss2d,
    pub cab: Cab,
}

impl Rssb {
    pub fn new(prefix: impl Into<String>, channels: usize, state: usize) -> Result<Self> {
        let prefix = prefix.into();
        Ok(Self {
            ss2d: Ss2d::new(format!("{prefix}.ss2d"), channels, state),
            cab: Cab::new(format!("{prefix}.cab"), channels, CAB_REDUCTION)?,
            prefix,
        })
    }

    fn name(&self, s: &str) -> String {
        format!("{}.{s}", self.prefix)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let c = self.ss2d.channels;
        let mut v = vec![
            ParamSpec::full(self.name("ln1.gamma"), vec![c], Init::Const(1.0)),
            ParamSpec::full(self.name("ln1.beta"), vec![c], Init::Const(0.0)),
        ];
        v.extend(self.ss2d.param_specs());
        v.push(ParamSpec::full(self.name("scale1"), vec![1], Init::Const(1.0)));
        v.push(ParamSpec::full(self.name("ln2.gamma"), vec![c], Init::Const(1.0)));
        v.push(ParamSpec::full(self.name("ln2.beta"), vec![c], Init::Const(0.0)));
        v.extend(self.cab.param_specs());
        v.push(ParamSpec::full(self.name("scale2"), vec![1], Init::Const(1.0)));
        v
    }

    pub fn activation_sites(&self) -> Vec<String> {
        let mut v = vec![self.name("ln1_out")];
        v.extend(self.ss2d.activation_sites());
        v.push(self.name("ln2_out"));
        v.extend(self.cab.activation_sites());
        v
    }

    pub fn forward(&self, tape: &mut Tape, src: &mut dyn ParamSource, x: Var) -> Result<Var> {
        let y = self.branch(tape, src, x, "ln1", "ln1_out", "scale1", |t, s, v| self.ss2d.forward(t, s, v))?;
        self.branch(tape, src, y, "ln2", "ln2_out", "scale2", |t, s, v| self.cab.forward(t, s, v))
    }

    #[allow(clippy::too_many_arguments)]
    fn branch(
        &self,
        tape: &mut Tape,
        src: &mut dyn ParamSource,
        x: Var,
        norm: &str,
        site: &str,
        scale: &str,
        f: impl FnOnce(&mut Tape, &mut dyn ParamSource, Var) -> Result<Var>,
    ) -> Result<Var> {
        let g = src.param(tape, &self.name(&format!("{norm}.gamma")))?;
        let b = src.param(tape, &self.name(&format!("{norm}.beta")))?;
        let t = tape.layer_norm_channels(x, g, b, LN_EPS)?;
        let t = src.activation(tape, &self.name(site), t)?;
        let t = f(tape, src, t)?;
        let s = src.param(tape, &self.name(scale))?;
        let t = tape.mul(t, s)?;
        tape.add(x, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(c: usize, h: usize, w: usize, seed: u64) -> (Tape, VarMap, Rssb, Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blk = Rssb::new("b", c, 4).unwrap();
        let mut tape = Tape::new();
        let src = VarMap::from_specs(&mut tape, &blk.param_specs(), &mut rng);
        let x = tape.constant(Tensor::rand_uniform(&[c, h, w], -1.0, 1.0, &mut rng));
        (tape, src, blk, x)
    }

    #[test]
    fn shapes_preserved() {
        for &(h, w) in &[(1, 1), (3, 5), (8, 8)] {
            let (mut tape, mut src, blk, x) = setup(8, h, w, 1);
            let y = blk.forward(&mut tape, &mut src, x).unwrap();
            assert_eq!(tape.shape(y), &[8, h, w]);
            assert!(tape.value(y).all_finite());
        }
    }

    #[test]
    fn zeroed_residual_scales_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let blk = Rssb::new("b", 4, 2).unwrap();
        let mut tape = Tape::new();
        let specs: Vec<ParamSpec> = blk
            .param_specs()
            .into_iter()
            .map(|mut s| {
                if s.kind == ParamKind::Weight {
                    s.init = Init::Const(0.0);
                }
                s
            })
            .collect();
        let mut src = VarMap::from_specs(&mut tape, &specs, &mut rng);
        let x = tape.constant(Tensor::rand_uniform(&[4, 3, 3], -1.0, 1.0, &mut rng));
        let y = blk.forward(&mut tape, &mut src, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn cab_zero_input_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cab = Cab::new("c", 8, 4).unwrap();
        let mut tape = Tape::new();
        let mut src = VarMap::from_specs(&mut tape, &cab.param_specs(), &mut rng);
        let x = tape.constant(Tensor::zeros(&[8, 4, 4]));
        let y = cab.forward(&mut tape, &mut src, x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cab_rejects_indivisible_channels() {
        assert!(Cab::new("c", 6, 4).is_err());
    }

    #[test]
    fn site_and_param_counts() {
        let blk = Rssb::new("body.0", 16, 4).unwrap();
        assert_eq!(blk.activation_sites().len(), 6);
        let weights = blk.param_specs().iter().filter(|s| s.kind == ParamKind::Weight).count();
        assert_eq!(weights, 11);
    }

    #[test]
    fn dt_bias_init_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Init::DtBias.sample(&[200], &mut rng);
        for &b in t.data() {
            let dt = (1.0 + b.exp()).ln();
            assert!((1e-3 - 1e-12..=1e-1 + 1e-12).contains(&dt));
        }
    }
}
