//! The encoder-decoder network with exact reverse-mode gradients.

use super::aac::{AacCache, AacModule, BranchArrangement};
use super::config::{filter_schedule, NetworkConfig};
use super::conv::{Conv3dLayer, ConvSpec, TransposedConv3dLayer};
use super::norm::{Activation, InstanceNorm, NormCache};
use super::params::{Gradients, Params};
use crate::voxcore::Axis;
use crate::{Error, Result, Rng, Scalar, Tensor5};

/// Convolution (no bias) followed by instance norm and leaky activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNormAct<T: Scalar> {
    pub conv: Conv3dLayer<T>,
    pub norm: InstanceNorm<T>,
}

#[derive(Clone, Debug)]
struct ConvNormActCache<T: Scalar> {
    input: Tensor5<T>,
    norm: NormCache<T>,
}

impl<T: Scalar> ConvNormAct<T> {
    fn new(cin: usize, cout: usize, spec: ConvSpec, cfg: &NetworkConfig) -> Self {
        ConvNormAct {
            conv: Conv3dLayer::zeros(cin, cout, spec, false),
            norm: InstanceNorm::new(cout, cfg.norm_eps, Activation::LeakyRelu(cfg.leaky_slope)),
        }
    }

    fn forward(&self, x: &Tensor5<T>, record: bool) -> Result<(Tensor5<T>, Option<ConvNormActCache<T>>)> {
        let z = self.conv.forward(x)?;
        let (y, norm) = self.norm.forward(&z)?;
        Ok((y, record.then(|| ConvNormActCache { input: x.clone(), norm })))
    }

    fn backward(&self, cache: &ConvNormActCache<T>, grad_out: &Tensor5<T>, grad: &mut Self) -> Result<Tensor5<T>> {
        let dz = self.norm.backward(&cache.norm, grad_out, &mut grad.norm);
        Ok(self.conv.backward(&cache.input, &dz, &mut grad.conv, true)?.expect("input gradient requested"))
    }

    fn init(&mut self, seed: u64, prefix: &str, gain: f64) {
        self.conv.init_normal(&mut Rng::for_name(seed, &format!("{prefix}.conv.weight")), gain);
    }
}

impl<T: Scalar> Params<T> for ConvNormAct<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor5<T>)) {
        self.conv.visit(&format!("{prefix}.conv"), f);
        self.norm.visit(&format!("{prefix}.norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor5<T>)) {
        self.conv.visit_mut(&format!("{prefix}.conv"), f);
        self.norm.visit_mut(&format!("{prefix}.norm"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStage<T: Scalar> {
    pub first: ConvNormAct<T>,
    pub second: ConvNormAct<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStage<T: Scalar> {
    pub up: TransposedConv3dLayer<T>,
    pub aac: Option<AacModule<T>>,
    pub first: ConvNormAct<T>,
    pub second: ConvNormAct<T>,
}

#[derive(Clone, Debug)]
struct EncoderRecord<T: Scalar> {
    first: ConvNormActCache<T>,
    second: ConvNormActCache<T>,
}

#[derive(Clone, Debug)]
struct DecoderRecord<T: Scalar> {
    up_input: Tensor5<T>,
    up_channels: usize,
    aac: Option<AacCache<T>>,
    first: ConvNormActCache<T>,
    second: ConvNormActCache<T>,
}

#[derive(Clone, Debug)]
struct Record<T: Scalar> {
    encoders: Vec<EncoderRecord<T>>,
    /// Indexed by resolution level.
    decoders: Vec<Option<DecoderRecord<T>>>,
    head_input: Tensor5<T>,
    logits_dims: crate::Dims5,
}

/// Activation cache filled by [`Network::forward_cached`].
#[derive(Clone, Debug)]
pub struct Tape<T: Scalar> {
    record: Option<Record<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape { record: None }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        self.record.is_some()
    }

    pub fn clear(&mut self) {
        self.record = None;
    }

    /// Features entering the output projection (last decoder block output).
    pub fn decoder_output(&self) -> Option<&Tensor5<T>> {
        self.record.as_ref().map(|r| &r.head_input)
    }

    /// Sign pattern of every leaky-activation input, in a fixed order. Two
    /// evaluations with equal patterns lie in the same linear region of the
    /// activations.
    pub fn activation_signs(&self) -> Vec<bool> {
        let Some(r) = &self.record else { return Vec::new() };
        let mut caches: Vec<&ConvNormActCache<T>> = Vec::new();
        for e in &r.encoders {
            caches.extend([&e.first, &e.second]);
        }
        for d in r.decoders.iter().flatten() {
            caches.extend([&d.first, &d.second]);
        }
        caches
            .into_iter()
            .flat_map(|c| c.norm.pre_activation().data().iter().map(|v| *v >= T::zero()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Scalar = f32> {
    config: NetworkConfig,
    encoders: Vec<EncoderStage<T>>,
    /// Indexed by resolution level `0..stages-1`.
    decoders: Vec<DecoderStage<T>>,
    head: Conv3dLayer<T>,
}

impl<T: Scalar> Network<T> {
    /// All-zero parameters (norm scales are one).
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let cfg = &config;
        let mut encoders = Vec::with_capacity(cfg.stages);
        let mut prev = cfg.in_channels;
        for s in 0..cfg.stages {
            let (enc, _) = filter_schedule(cfg, s)?;
            let spec = if s == 0 { ConvSpec::SAME3 } else { ConvSpec::DOWN3 };
            encoders.push(EncoderStage {
                first: ConvNormAct::new(prev, enc, spec, cfg),
                second: ConvNormAct::new(enc, enc, ConvSpec::SAME3, cfg),
            });
            prev = enc;
        }
        let arrangement = if cfg.aac_sequential { BranchArrangement::Sequential } else { BranchArrangement::Parallel };
        let mut decoders = Vec::with_capacity(cfg.stages - 1);
        for s in 0..cfg.stages - 1 {
            let (enc, dec) = filter_schedule(cfg, s)?;
            let below = if s + 2 == cfg.stages { filter_schedule(cfg, s + 1)?.0 } else { filter_schedule(cfg, s + 1)?.1 };
            decoders.push(DecoderStage {
                up: TransposedConv3dLayer::zeros(below, dec, ConvSpec::UP2),
                aac: cfg.aac_at(s).then(|| AacModule::zeros(dec, cfg.heads, cfg.pos_capacity, arrangement)),
                first: ConvNormAct::new(dec + enc, dec, ConvSpec::SAME3, cfg),
                second: ConvNormAct::new(dec, dec, ConvSpec::SAME3, cfg),
            });
        }
        let (_, dec0) = filter_schedule(cfg, 0)?;
        let head = Conv3dLayer::zeros(dec0, cfg.num_classes, ConvSpec::POINT, true);
        Ok(Network { config, encoders, decoders, head })
    }

    /// Seeded initialization. Every tensor draws from its own named stream,
    /// so a parameter's initial value does not depend on which other modules
    /// exist. Attention merge weights and positional embeddings start at
    /// zero, making a fresh attention module an exact identity.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let seed = net.config.seed;
        let leaky_gain = 2f64.sqrt();
        for (s, e) in net.encoders.iter_mut().enumerate() {
            e.first.init(seed, &format!("enc{s}.block0"), leaky_gain);
            e.second.init(seed, &format!("enc{s}.block1"), leaky_gain);
        }
        for (s, d) in net.decoders.iter_mut().enumerate() {
            d.up.init_normal(&mut Rng::for_name(seed, &format!("dec{s}.up.weight")), 1.0);
            if let Some(aac) = d.aac.as_mut() {
                aac.init_projections(seed, &format!("dec{s}.aac"));
            }
            d.first.init(seed, &format!("dec{s}.block0"), leaky_gain);
            d.second.init(seed, &format!("dec{s}.block1"), leaky_gain);
        }
        net.head.init_normal(&mut Rng::for_name(seed, "head.weight"), 1.0);
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn encoders(&self) -> &[EncoderStage<T>] {
        &self.encoders
    }

    pub fn decoders(&self) -> &[DecoderStage<T>] {
        &self.decoders
    }

    pub fn decoders_mut(&mut self) -> &mut [DecoderStage<T>] {
        &mut self.decoders
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, t| t.fill(T::zero()));
        z
    }

    /// Same parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut out = Network::<U>::zeros(self.config.clone()).expect("config already validated");
        let mut src = Vec::new();
        self.visit("", &mut |_, t| src.push(t.cast::<U>()));
        let mut it = src.into_iter();
        out.visit_mut("", &mut |_, t| *t = it.next().expect("same parameter layout"));
        out
    }

    /// Adds `N(0, std^2)` noise to every parameter, including the ones that
    /// are zero-initialized. Used to exercise every gradient path.
    pub fn perturb(&mut self, seed: u64, std: f64) {
        self.visit_mut("", &mut |name, t| {
            let mut rng = Rng::for_name(seed ^ 0x9e37_79b9_7f4a_7c15, name);
            for v in t.data_mut() {
                *v = *v + T::c(rng.normal() * std);
            }
        });
    }

    /// Names and tensors in visiting order.
    pub fn named_params(&self) -> Vec<(String, &Tensor5<T>)> {
        let mut names = Vec::new();
        self.visit("", &mut |n, _| names.push(n.to_string()));
        let mut tensors: Vec<&Tensor5<T>> = Vec::new();
        for e in &self.encoders {
            for b in [&e.first, &e.second] {
                tensors.push(&b.conv.weight);
                tensors.extend([&b.norm.scale, &b.norm.shift]);
            }
        }
        for d in &self.decoders {
            tensors.push(&d.up.weight);
            if let Some(a) = &d.aac {
                tensors.extend(a.pos.iter());
                tensors.extend(a.branches.iter().map(|b| &b.qkv));
                tensors.push(&a.merge.weight);
                tensors.extend(a.merge.bias.iter());
            }
            for b in [&d.first, &d.second] {
                tensors.push(&b.conv.weight);
                tensors.extend([&b.norm.scale, &b.norm.shift]);
            }
        }
        tensors.push(&self.head.weight);
        tensors.extend(self.head.bias.iter());
        debug_assert_eq!(names.len(), tensors.len());
        names.into_iter().zip(tensors).collect()
    }

    fn check_input(&self, x: &Tensor5<T>) -> Result<()> {
        let d = x.dims();
        if d.channels != self.config.in_channels {
            return Err(Error::shape(format!(
                "input has {} channels, network expects {}",
                d.channels, self.config.in_channels
            )));
        }
        let factor = self.config.divisor();
        for axis in Axis::ALL {
            let len = d.spatial()[axis.index()];
            if len == 0 || len % factor != 0 {
                return Err(Error::Indivisible { axis: axis.name(), len, factor });
            }
        }
        Ok(())
    }

    /// Logits (N, classes, D, H, W) without recording intermediates.
    pub fn forward(&self, x: &Tensor5<T>) -> Result<Tensor5<T>> {
        self.run(x, None)
    }

    /// Logits, recording every intermediate `backward` needs into `tape`.
    pub fn forward_cached(&self, x: &Tensor5<T>, tape: &mut Tape<T>) -> Result<Tensor5<T>> {
        tape.clear();
        self.run(x, Some(tape))
    }

    fn run(&self, x: &Tensor5<T>, tape: Option<&mut Tape<T>>) -> Result<Tensor5<T>> {
        self.check_input(x)?;
        let record = tape.is_some();
        let stages = self.config.stages;
        let mut skips: Vec<Tensor5<T>> = Vec::with_capacity(stages);
        let mut enc_records = Vec::with_capacity(stages);
        for (s, e) in self.encoders.iter().enumerate() {
            let input = if s == 0 { x } else { &skips[s - 1] };
            let (a, ca) = e.first.forward(input, record)?;
            let (b, cb) = e.second.forward(&a, record)?;
            skips.push(b);
            if let (Some(first), Some(second)) = (ca, cb) {
                enc_records.push(EncoderRecord { first, second });
            }
        }

        let mut dec_records: Vec<Option<DecoderRecord<T>>> = vec![None; stages - 1];
        let mut cur = skips.pop().expect("at least two stages");
        for s in (0..stages - 1).rev() {
            let d = &self.decoders[s];
            let mut u = d.up.forward(&cur)?;
            let mut aac_cache = None;
            if let Some(aac) = &d.aac {
                let (out, cache) = aac.forward(&u)?;
                u = out;
                aac_cache = record.then_some(cache);
            }
            let up_channels = u.dims().channels;
            let cat = Tensor5::concat_channels(&u, &skips[s])?;
            drop(u);
            let (a, ca) = d.first.forward(&cat, record)?;
            let (b, cb) = d.second.forward(&a, record)?;
            let up_input = std::mem::replace(&mut cur, b);
            if let (Some(first), Some(second)) = (ca, cb) {
                dec_records[s] = Some(DecoderRecord { up_input, up_channels, aac: aac_cache, first, second });
            }
        }
        let logits = self.head.forward(&cur)?;
        if let Some(tape) = tape {
            tape.record = Some(Record {
                encoders: enc_records,
                decoders: dec_records,
                head_input: cur,
                logits_dims: logits.dims(),
            });
        }
        Ok(logits)
    }

    /// Exact gradient of `<logits, logit_grad>` with respect to every
    /// parameter and the input of the recorded forward pass.
    pub fn backward(&self, tape: &Tape<T>, logit_grad: &Tensor5<T>) -> Result<Gradients<T>> {
        let rec = tape.record.as_ref().ok_or(Error::NoForwardCache)?;
        if logit_grad.dims() != rec.logits_dims {
            return Err(Error::shape(format!(
                "logit gradient {} does not match logits {}",
                logit_grad.dims(),
                rec.logits_dims
            )));
        }
        let stages = self.config.stages;
        let mut grad = self.zeros_like();
        let mut dcur = self
            .head
            .backward(&rec.head_input, logit_grad, &mut grad.head, true)?
            .expect("input gradient requested");

        let mut dskips: Vec<Option<Tensor5<T>>> = vec![None; stages];
        for s in 0..stages - 1 {
            let d = &self.decoders[s];
            let r = rec.decoders[s].as_ref().ok_or(Error::NoForwardCache)?;
            let g = &mut grad.decoders[s];
            let da = d.second.backward(&r.second, &dcur, &mut g.second)?;
            let dcat = d.first.backward(&r.first, &da, &mut g.first)?;
            let (mut du, dskip) = dcat.split_channels(r.up_channels);
            accumulate(&mut dskips[s], dskip);
            if let (Some(aac), Some(cache)) = (&d.aac, &r.aac) {
                du = aac.backward(cache, &du, g.aac.as_mut().expect("gradient mirrors network"))?;
            }
            dcur = d.up.backward(&r.up_input, &du, &mut g.up)?;
        }
        accumulate(&mut dskips[stages - 1], dcur);

        let mut input_grad = None;
        for s in (0..stages).rev() {
            let e = &self.encoders[s];
            let r = &rec.encoders[s];
            let dh = dskips[s].take().expect("every encoder output receives a gradient");
            let g = &mut grad.encoders[s];
            let da = e.second.backward(&r.second, &dh, &mut g.second)?;
            let dx = e.first.backward(&r.first, &da, &mut g.first)?;
            if s > 0 {
                accumulate(&mut dskips[s - 1], dx);
            } else {
                input_grad = Some(dx);
            }
        }

        let mut params = Vec::new();
        grad.visit("", &mut |n, t| params.push((n.to_string(), t.clone())));
        Ok(Gradients { params, input: input_grad.expect("stage 0 visited") })
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor5<T>>, g: Tensor5<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Params<T> for Network<T> {
    fn visit(&self, _prefix: &str, f: &mut dyn FnMut(&str, &Tensor5<T>)) {
        for (s, e) in self.encoders.iter().enumerate() {
            e.first.visit(&format!("enc{s}.block0"), f);
            e.second.visit(&format!("enc{s}.block1"), f);
        }
        for (s, d) in self.decoders.iter().enumerate() {
            d.up.visit(&format!("dec{s}.up"), f);
            if let Some(a) = &d.aac {
                a.visit(&format!("dec{s}.aac"), f);
            }
            d.first.visit(&format!("dec{s}.block0"), f);
            d.second.visit(&format!("dec{s}.block1"), f);
        }
        self.head.visit("head", f);
    }

    fn visit_mut(&mut self, _prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor5<T>)) {
        for (s, e) in self.encoders.iter_mut().enumerate() {
            e.first.visit_mut(&format!("enc{s}.block0"), f);
            e.second.visit_mut(&format!("enc{s}.block1"), f);
        }
        for (s, d) in self.decoders.iter_mut().enumerate() {
            d.up.visit_mut(&format!("dec{s}.up"), f);
            if let Some(a) = &mut d.aac {
                a.visit_mut(&format!("dec{s}.aac"), f);
            }
            d.first.visit_mut(&format!("dec{s}.block0"), f);
            d.second.visit_mut(&format!("dec{s}.block1"), f);
        }
        self.head.visit_mut("head", f);
    }
}
