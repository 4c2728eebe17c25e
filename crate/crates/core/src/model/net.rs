use super::config::ModelConfig;
use super::store::ParamStore;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::quant::{dls_quantize_var, fake_quant, rfa_quantize_var, RfaParams};
use crate::resample::resize_bicubic;
use crate::ssm::block::{Init, ParamKind, ParamSource, ParamSpec, Rssb};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashMap};

/// How a body weight is quantized in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightQuant {
    /// Learnable thresholds over frozen uniform levels; store entries
    /// `{name}.rfa_levels` and `{name}.rfa_thresholds`.
    Rfa { bits: u32, fixed_slope: f64, rho: f64 },
    /// Fixed uniform grid with straight-through backward; store entry
    /// `{name}.ste_range` holding `(alpha, beta)`.
    Static { bits: u32 },
    /// The stored weight already lies on `{name}.rfa_levels`.
    Frozen { bits: u32 },
}

impl WeightQuant {
    pub fn bits(&self) -> u32 {
        match *self {
            WeightQuant::Rfa { bits, .. } | WeightQuant::Static { bits } | WeightQuant::Frozen { bits } => bits,
        }
    }
}

/// How an activation site is quantized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActQuant {
    /// Store entries `{site}.dls_w1` and `{site}.dls_w2`.
    Dls { bits: u32 },
    /// Store entry `{site}.ste_range` holding `(alpha, beta)`.
    Static { bits: u32 },
}

impl ActQuant {
    pub fn bits(&self) -> u32 {
        match *self {
            ActQuant::Dls { bits } | ActQuant::Static { bits } => bits,
        }
    }
}

pub fn levels_key(w: &str) -> String {
    format!("{w}.rfa_levels")
}
pub fn thresholds_key(w: &str) -> String {
    format!("{w}.rfa_thresholds")
}
pub fn range_key(name: &str) -> String {
    format!("{name}.ste_range")
}
pub fn dls_keys(site: &str) -> (String, String) {
    (format!("{site}.dls_w1"), format!("{site}.dls_w2"))
}

/// Shallow convolution, residual state-space body, body-end convolution and
/// reconstruction head, plus a global residual of the (upsampled) input.
#[derive(Clone, Debug)]
pub struct RestorationNet {
    pub cfg: ModelConfig,
    pub blocks: Vec<Rssb>,
    /// Network parameters (quantizer state excluded) in registration order.
    pub specs: Vec<ParamSpec>,
    pub store: ParamStore,
    pub weight_quant: BTreeMap<String, WeightQuant>,
    pub act_quant: BTreeMap<String, ActQuant>,
}

fn conv_spec(name: &str, cout: usize, cin: usize, kind: ParamKind) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        shape: vec![cout, cin, 3, 3],
        init: Init::KaimingUniform { fan_in: 9 * cin },
        kind,
    }
}

fn bias_spec(name: &str, c: usize) -> ParamSpec {
    ParamSpec::full(name.into(), vec![c, 1, 1], Init::Const(0.0))
}

impl RestorationNet {
    pub fn head_channels(&self) -> usize {
        let s = self.cfg.scale as usize;
        3 * s * s
    }

    /// Every activation site in forward order, whether quantized or not.
    pub fn all_sites(&self) -> Vec<String> {
        let mut v: Vec<String> = self.blocks.iter().flat_map(|b| b.activation_sites()).collect();
        v.push("body_end_in".into());
        v
    }

    /// Sites enabled for activation quantization by the configuration.
    pub fn quant_sites(&self) -> Vec<String> {
        self.all_sites()
            .into_iter()
            .filter(|s| self.cfg.act_sites.iter().any(|k| site_kind(s) == k))
            .collect()
    }

    /// Body weights: the quantizable parameters.
    pub fn body_weights(&self) -> Vec<&ParamSpec> {
        self.specs.iter().filter(|s| s.kind == ParamKind::Weight).collect()
    }

    pub fn param_count(&self) -> usize {
        self.specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    pub fn is_quantized(&self) -> bool {
        !self.weight_quant.is_empty() || !self.act_quant.is_empty()
    }

    /// Checks a network input and returns its spatial size.
    pub fn check_input(&self, img: &Tensor) -> Result<(usize, usize)> {
        let &[3, h, w] = img.shape() else {
            return Err(Error::InvalidShape {
                shape: img.shape().to_vec(),
                reason: "network input must be 3×H×W".into(),
            });
        };
        if h < 8 || w < 8 {
            return Err(Error::InvalidShape {
                shape: img.shape().to_vec(),
                reason: "network input must be at least 8×8".into(),
            });
        }
        if let Some(v) = img.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidShape {
                shape: img.shape().to_vec(),
                reason: format!("input values must lie in [0, 1], found {v}"),
            });
        }
        Ok((h, w))
    }

    /// Builds the graph for `img` on `tape`.
    pub fn forward(&self, tape: &mut Tape, binder: &mut Binder<'_, '_>, img: &Tensor) -> Result<Var> {
        let (h, w) = self.check_input(img)?;
        let s = self.cfg.scale as usize;
        let x = tape.constant(img.clone());
        let f = conv_bias(tape, binder, x, "shallow", false)?;
        let mut f = f;
        for blk in &self.blocks {
            f = blk.forward(tape, binder, f)?;
        }
        let f = binder.activation(tape, "body_end_in", f)?;
        let f = conv_bias(tape, binder, f, "body_end", true)?;
        let mut out = conv_bias(tape, binder, f, "head", false)?;
        let skip = if s > 1 {
            out = tape.pixel_shuffle(out, s)?;
            resize_bicubic(img, h * s, w * s)?
        } else {
            img.clone()
        };
        let skip = tape.constant(skip);
        tape.add(out, skip)
    }

    /// Inference without gradients.
    pub fn infer(&self, img: &Tensor) -> Result<Tensor> {
        self.infer_observed(img, None)
    }

    /// Inference with an activation observer. The observer sees every site
    /// (before quantization) and may return a replacement value.
    pub fn infer_observed<'o>(&self, img: &Tensor, observer: Option<&'o mut Observer<'o>>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(self, false);
        binder.observer = observer;
        let y = self.forward(&mut tape, &mut binder, img)?;
        Ok(tape.value(y).clone())
    }

    /// Thresholds, levels and ranges as `RfaParams` for an RFA weight.
    pub fn rfa_params(&self, w: &str) -> Result<RfaParams> {
        match self.weight_quant.get(w) {
            Some(&WeightQuant::Rfa { fixed_slope, rho, .. }) => RfaParams::new(
                self.store.get(&levels_key(w))?.data().to_vec(),
                self.store.get(&thresholds_key(w))?.data().to_vec(),
                fixed_slope,
                rho,
            ),
            _ => Err(Error::Quant(format!("{w} has no RFA quantizer"))),
        }
    }

    /// The weight tensor the forward pass actually uses.
    pub fn effective_weight(&self, w: &str) -> Result<Tensor> {
        let latent = self.store.get(w)?;
        match self.weight_quant.get(w) {
            None | Some(WeightQuant::Frozen { .. }) => Ok(latent.clone()),
            Some(WeightQuant::Rfa { .. }) => crate::quant::rfa_forward(latent, &self.rfa_params(w)?),
            Some(&WeightQuant::Static { bits }) => {
                let ab = self.store.get(&range_key(w))?.data();
                crate::quant::quantize_uniform(latent, &crate::quant::UniformQuantConfig::new(bits, ab[0], ab[1])?)
            }
        }
    }
}

/// `"body.3.ss2d.scan_in"` → `"ss2d.scan_in"`.
pub fn site_kind(site: &str) -> &str {
    if let Some(rest) = site.strip_prefix("body.") {
        if let Some((_, kind)) = rest.split_once('.') {
            return kind;
        }
    }
    site
}

fn conv_bias(tape: &mut Tape, src: &mut dyn ParamSource, x: Var, name: &str, quantized: bool) -> Result<Var> {
    let wname = format!("{name}.weight");
    let k = if quantized { src.weight(tape, &wname)? } else { src.param(tape, &wname)? };
    let y = tape.conv2d(x, k, 1, 1)?;
    let b = src.param(tape, &format!("{name}.bias"))?;
    tape.add(y, b)
}

pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<RestorationNet> {
    cfg.validate()?;
    let c = cfg.channels;
    let blocks = (0..cfg.blocks)
        .map(|i| Rssb::new(format!("body.{i}"), c, cfg.state_size))
        .collect::<Result<Vec<_>>>()?;
    let s = cfg.scale as usize;
    let mut specs = vec![conv_spec("shallow.weight", c, 3, ParamKind::Full), bias_spec("shallow.bias", c)];
    for b in &blocks {
        specs.extend(b.param_specs());
    }
    specs.push(conv_spec("body_end.weight", c, c, ParamKind::Weight));
    specs.push(bias_spec("body_end.bias", c));
    specs.push(conv_spec("head.weight", 3 * s * s, c, ParamKind::Full));
    specs.push(bias_spec("head.bias", 3 * s * s));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for sp in &specs {
        store.insert(sp.name.clone(), sp.init.sample(&sp.shape, &mut rng), true)?;
    }
    let mut cfg = cfg.clone();
    cfg.bits = None;
    Ok(RestorationNet {
        cfg,
        blocks,
        specs,
        store,
        weight_quant: BTreeMap::new(),
        act_quant: BTreeMap::new(),
    })
}

/// Observer callback: `(site, value)` → optional replacement.
pub type Observer<'a> = dyn FnMut(&str, &Tensor) -> Option<Tensor> + 'a;

/// Resolves parameter names to tape leaves for one forward pass, applying
/// the network's quantizers on the way.
pub struct Binder<'n, 'o> {
    net: &'n RestorationNet,
    grad: bool,
    /// Leaves created so far, by store name.
    pub leaves: HashMap<String, Var>,
    pub observer: Option<&'o mut Observer<'o>>,
}

impl<'n, 'o> Binder<'n, 'o> {
    /// With `grad`, trainable store entries become differentiable leaves.
    pub fn new(net: &'n RestorationNet, grad: bool) -> Self {
        Self {
            net,
            grad,
            leaves: HashMap::new(),
            observer: None,
        }
    }

    fn leaf(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        if let Some(&v) = self.leaves.get(name) {
            return Ok(v);
        }
        let value = self.net.store.get(name)?.clone();
        let v = if self.grad && self.net.store.is_trainable(name) {
            tape.param(value)
        } else {
            tape.constant(value)
        };
        self.leaves.insert(name.to_string(), v);
        Ok(v)
    }

    fn range(&self, tape: &mut Tape, name: &str) -> Result<(Var, Var)> {
        let ab = self.net.store.get(&range_key(name))?.data();
        let (a, b) = (Tensor::scalar(ab[0]), Tensor::scalar(ab[1]));
        Ok((tape.constant(a), tape.constant(b)))
    }
}

impl ParamSource for Binder<'_, '_> {
    fn param(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        self.leaf(tape, name)
    }

    fn weight(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        let latent = self.leaf(tape, name)?;
        match self.net.weight_quant.get(name).copied() {
            None | Some(WeightQuant::Frozen { .. }) => Ok(latent),
            Some(WeightQuant::Rfa { .. }) => {
                let cfg = self.net.rfa_params(name)?;
                let thr = self.leaf(tape, &thresholds_key(name))?;
                rfa_quantize_var(tape, latent, thr, &cfg)
            }
            Some(WeightQuant::Static { bits }) => {
                let (a, b) = self.range(tape, name)?;
                fake_quant(tape, latent, a, b, bits)
            }
        }
    }

    fn activation(&mut self, tape: &mut Tape, site: &str, x: Var) -> Result<Var> {
        let mut x = x;
        if let Some(obs) = self.observer.as_mut() {
            if let Some(replacement) = obs(site, tape.value(x)) {
                x = tape.constant(replacement);
            }
        }
        match self.net.act_quant.get(site).copied() {
            None => Ok(x),
            Some(ActQuant::Dls { bits }) => {
                let (k1, k2) = dls_keys(site);
                let w1 = self.leaf(tape, &k1)?;
                let w2 = self.leaf(tape, &k2)?;
                dls_quantize_var(tape, x, w1, w2, bits).map_err(|e| match e {
                    Error::Quant(m) => Error::Quant(format!("{site}: {m}")),
                    other => other,
                })
            }
            Some(ActQuant::Static { bits }) => {
                let (a, b) = self.range(tape, site)?;
                fake_quant(tape, x, a, b, bits)
            }
        }
    }
}

/// One multiply-accumulate-bearing operation in the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct OpEntry {
    pub name: String,
    pub macs: u64,
    /// Weight consumed by the op, if any.
    pub weight: Option<String>,
}

impl RestorationNet {
    /// MAC census of a forward pass on an `h×w` input.
    pub fn op_census(&self, h: usize, w: usize) -> Vec<OpEntry> {
        let (c, n) = (self.cfg.channels as u64, self.cfg.state_size as u64);
        let l = (h * w) as u64;
        let mut v = Vec::new();
        let mut push = |name: String, macs: u64, weight: Option<String>| v.push(OpEntry { name, macs, weight });
        push("shallow".into(), c * 3 * 9 * l, Some("shallow.weight".into()));
        for b in &self.blocks {
            let e = b.ss2d.inner as u64;
            let r = (b.cab.channels / b.cab.reduction) as u64;
            let p = &b.ss2d.prefix;
            push(format!("{p}.in_proj"), 2 * e * c * l, Some(format!("{p}.in_proj")));
            push(format!("{p}.dwconv"), e * 9 * l, Some(format!("{p}.dwconv")));
            for o in crate::ssm::ScanOrder::ALL {
                let k = o.name();
                push(format!("{p}.x_proj.{k}"), (2 * n + e) * e * l, Some(format!("{p}.x_proj.{k}")));
                push(format!("{p}.scan.{k}"), e * n * l, None);
            }
            push(format!("{p}.out_proj"), c * e * l, Some(format!("{p}.out_proj")));
            let q = &b.cab.prefix;
            push(format!("{q}.conv1"), c * c * 9 * l, Some(format!("{q}.conv1")));
            push(format!("{q}.conv2"), c * c * 9 * l, Some(format!("{q}.conv2")));
            push(format!("{q}.ca.fc1"), r * c, Some(format!("{q}.ca.fc1")));
            push(format!("{q}.ca.fc2"), c * r, Some(format!("{q}.ca.fc2")));
        }
        push("body_end".into(), c * c * 9 * l, Some("body_end.weight".into()));
        push("head".into(), self.head_channels() as u64 * c * 9 * l, Some("head.weight".into()));
        v
    }
}
