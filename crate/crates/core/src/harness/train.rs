//! Patch-based training: foreground-biased sampling, augmentation, dice +
//! cross-entropy, SGD with Nesterov momentum and polynomial decay.

use serde::{Deserialize, Serialize};

use super::folds::make_folds;
use crate::loss::{one_hot, total_loss, LossConfig};
use crate::net::{Network, NetworkConfig, Params, Tape};
use crate::prep::{augment, AugmentConfig};
use crate::voxcore::{softmax_channels, Geometry};
use crate::{class, Dims5, Error, LabelMap, Result, Rng, Tensor5, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub folds: usize,
    /// Fold trained by `train_fold`.
    pub fold: usize,
    pub patch: [usize; 3],
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub poly_exponent: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Share of patches centred on a foreground voxel.
    pub foreground_fraction: f64,
    pub seed: u64,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    /// Validate every this many epochs (0 = never).
    pub val_every: usize,
    /// Stop once validation soft dice reaches this value.
    pub target_soft_dice: Option<f64>,
    pub augment_enabled: bool,
    pub augment: AugmentConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 2,
            epochs: 300,
            folds: 5,
            fold: 0,
            patch: [64; 3],
            steps_per_epoch: 50,
            learning_rate: 0.01,
            momentum: 0.99,
            nesterov: true,
            weight_decay: 3e-5,
            poly_exponent: 0.9,
            grad_clip: 12.0,
            foreground_fraction: 0.5,
            seed: 0,
            max_steps: None,
            val_every: 1,
            target_soft_dice: None,
            augment_enabled: true,
            augment: AugmentConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, net: &NetworkConfig) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config("batch_size, epochs and steps_per_epoch must be positive".into()));
        }
        let f = net.divisor();
        if let Some(a) = (0..3).find(|&a| self.patch[a] == 0 || self.patch[a] % f != 0) {
            return Err(Error::Indivisible { axis: crate::voxcore::Axis::ALL[a].name(), len: self.patch[a], factor: f });
        }
        if !(0.0..=1.0).contains(&self.foreground_fraction) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("foreground_fraction must lie in [0, 1] and momentum in [0, 1)".into()));
        }
        if self.learning_rate < 0.0 || self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return Err(Error::Config("learning_rate, weight_decay and grad_clip must be non-negative".into()));
        }
        self.augment.validate()?;
        self.loss.validate(net.num_classes)
    }

    /// `lr * (1 - epoch / epochs)^poly_exponent`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * (1.0 - epoch as f64 / self.epochs as f64).max(0.0).powf(self.poly_exponent)
    }
}

/// A preprocessed training case.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub id: String,
    pub image: Volume,
    pub labels: LabelMap,
}

/// Copies the box starting at `start` (may be negative or run past the
/// end); outside voxels take `pad` and background.
pub fn crop(image: &Volume, labels: &LabelMap, start: [isize; 3], patch: [usize; 3], pad: f32) -> Result<(Volume, LabelMap)> {
    let g = Geometry::new(patch, image.spacing(), image.geometry().origin)?;
    let dims = image.dims();
    let mut img = vec![pad; g.len()];
    let mut lab = vec![class::BACKGROUND; g.len()];
    for z in 0..patch[0] {
        let sz = start[0] + z as isize;
        if sz < 0 || sz >= dims[0] as isize {
            continue;
        }
        for y in 0..patch[1] {
            let sy = start[1] + y as isize;
            if sy < 0 || sy >= dims[1] as isize {
                continue;
            }
            for x in 0..patch[2] {
                let sx = start[2] + x as isize;
                if sx < 0 || sx >= dims[2] as isize {
                    continue;
                }
                let o = g.index(z, y, x);
                let s = image.geometry().index(sz as usize, sy as usize, sx as usize);
                img[o] = image.data()[s];
                lab[o] = labels.data()[s];
            }
        }
    }
    Ok((Volume::new(g, img)?, LabelMap::new(g, lab)?))
}

fn start_around(centre: usize, n: usize, p: usize) -> isize {
    if n <= p {
        -(((p - n) / 2) as isize)
    } else {
        (centre as isize - (p / 2) as isize).clamp(0, (n - p) as isize)
    }
}

struct Sampler<'a> {
    case: &'a Case,
    foreground: Vec<usize>,
    pad: f32,
}

impl<'a> Sampler<'a> {
    fn new(case: &'a Case) -> Self {
        let foreground = case.labels.data().iter().enumerate().filter(|(_, &l)| l != 0).map(|(i, _)| i).collect();
        Sampler { case, foreground, pad: case.image.min_max().0 }
    }

    fn sample(&self, patch: [usize; 3], fg_fraction: f64, rng: &mut Rng) -> Result<(Volume, LabelMap)> {
        let dims = self.case.image.dims();
        let start: [isize; 3] = if !self.foreground.is_empty() && rng.bernoulli(fg_fraction) {
            let c = self.case.image.geometry().coords(self.foreground[rng.below(self.foreground.len())]);
            std::array::from_fn(|a| start_around(c[a], dims[a], patch[a]))
        } else {
            std::array::from_fn(|a| {
                if dims[a] <= patch[a] {
                    start_around(0, dims[a], patch[a])
                } else {
                    rng.below(dims[a] - patch[a] + 1) as isize
                }
            })
        };
        crop(&self.case.image, &self.case.labels, start, patch, self.pad)
    }

    /// Patch centred on the foreground centroid (grid centre if none).
    fn central(&self, patch: [usize; 3]) -> Result<(Volume, LabelMap)> {
        let dims = self.case.image.dims();
        let g = self.case.image.geometry();
        let centre: [usize; 3] = if self.foreground.is_empty() {
            dims.map(|d| d / 2)
        } else {
            let mut s = [0f64; 3];
            for &i in &self.foreground {
                let c = g.coords(i);
                (0..3).for_each(|a| s[a] += c[a] as f64);
            }
            s.map(|v| (v / self.foreground.len() as f64).round() as usize)
        };
        let start = std::array::from_fn(|a| start_around(centre[a], dims[a], patch[a]));
        crop(&self.case.image, &self.case.labels, start, patch, self.pad)
    }
}

fn stack(patches: &[(Volume, LabelMap)], classes: usize) -> Result<(Tensor5<f32>, Tensor5<f32>)> {
    let [d, h, w] = patches[0].0.dims();
    let dims = Dims5::new(patches.len(), 1, d, h, w);
    let mut x = Vec::with_capacity(dims.len());
    let mut labels = Vec::with_capacity(dims.len());
    for (v, m) in patches {
        x.extend_from_slice(v.data());
        labels.extend_from_slice(m.data());
    }
    Ok((Tensor5::from_vec(dims, x)?, one_hot(&labels, dims.with_channels(classes))?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub dice: f64,
    pub ce: f64,
    pub grad_norm: f64,
}

/// Network plus optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    net: Network<f32>,
    velocity: Vec<Tensor5<f32>>,
    cfg: TrainConfig,
    steps: usize,
}

impl Trainer {
    pub fn new(net: Network<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate(net.config())?;
        let mut velocity = Vec::new();
        net.visit("", &mut |_, t| velocity.push(Tensor5::zeros(t.dims())));
        Ok(Trainer { net, velocity, cfg, steps: 0 })
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn into_network(self) -> Network<f32> {
        self.net
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One forward/backward/update on a batch.
    pub fn step(&mut self, x: &Tensor5<f32>, target: &Tensor5<f32>, lr: f64) -> Result<StepStats> {
        let mut tape = Tape::new();
        let logits = self.net.forward_cached(x, &mut tape)?;
        let diverged = |loss: f64| Error::Diverged { step: self.steps, loss };
        let probs = softmax_channels(&logits).map_err(|e| match e {
            Error::NonFiniteLogits => diverged(f64::NAN),
            other => other,
        })?;
        let out = total_loss(&probs, target, &self.cfg.loss)?;
        if !out.total.is_finite() {
            return Err(diverged(out.total));
        }
        let mut grads = self.net.backward(&tape, &out.grad_logits)?;
        let norm = (grads.squared_norm() as f64).sqrt();
        if !norm.is_finite() {
            return Err(diverged(out.total));
        }
        if self.cfg.grad_clip > 0.0 && norm > self.cfg.grad_clip {
            grads.scale((self.cfg.grad_clip / norm) as f32);
        }
        let (mu, wd, nesterov) = (self.cfg.momentum as f32, self.cfg.weight_decay as f32, self.cfg.nesterov);
        let lr = lr as f32;
        let mut k = 0;
        let velocity = &mut self.velocity;
        self.net.visit_mut("", &mut |_, p| {
            let g = &grads.params[k].1;
            let v = &mut velocity[k];
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let d = gi + wd * *w;
                *vi = mu * *vi + d;
                let update = if nesterov { d + mu * *vi } else { *vi };
                *w -= lr * update;
            }
            k += 1;
        });
        self.steps += 1;
        Ok(StepStats { loss: out.total, dice: out.dice, ce: out.ce, grad_norm: norm })
    }
}

/// Mean soft dice (`1 - dice loss`) over the central patch of each case.
pub fn soft_dice(net: &Network<f32>, cases: &[Case], patch: [usize; 3], loss: &LossConfig) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::invalid("soft dice of no cases"));
    }
    let mut sum = 0.0;
    for case in cases {
        let p = Sampler::new(case).central(patch)?;
        let (x, t) = stack(std::slice::from_ref(&p), net.config().num_classes)?;
        let probs = softmax_channels(&net.forward(&x)?)?;
        sum += 1.0 - crate::loss::dice_loss(&probs, &t, loss)?;
    }
    Ok(sum / cases.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_soft_dice: Option<f64>,
}

impl EpochStats {
    pub const TSV_HEADER: &'static str = "epoch\tsteps\tlr\ttrain_loss\tval_soft_dice";

    pub fn tsv_row(&self) -> String {
        let v = self.val_soft_dice.map_or("NA".into(), |d| format!("{d:.6}"));
        format!("{}\t{}\t{:.6e}\t{:.6}\t{}", self.epoch, self.steps, self.lr, self.train_loss, v)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub history: Vec<EpochStats>,
    pub steps: usize,
}

/// Trains a fresh network on `cases`, validating on `val` (or on the
/// training cases when `val` is empty).
pub fn train(
    cases: &[Case],
    val: &[Case],
    cfg: &TrainConfig,
    netcfg: &NetworkConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    if cases.is_empty() {
        return Err(Error::invalid("no training cases"));
    }
    cfg.validate(netcfg)?;
    let mut trainer = Trainer::new(Network::new(netcfg.clone())?, cfg.clone())?;
    let samplers: Vec<Sampler> = cases.iter().map(Sampler::new).collect();
    let val = if val.is_empty() { cases } else { val };
    let mut rng = Rng::for_name(cfg.seed, "train");
    let mut history = Vec::new();
    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0;
        let mut n = 0;
        for _ in 0..cfg.steps_per_epoch {
            if cfg.max_steps.is_some_and(|m| trainer.steps() >= m) {
                break;
            }
            let mut patches = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let s = &samplers[rng.below(samplers.len())];
                let (v, m) = s.sample(cfg.patch, cfg.foreground_fraction, &mut rng)?;
                patches.push(if cfg.augment_enabled { augment(&v, &m, &cfg.augment, &mut rng)? } else { (v, m) });
            }
            let (x, t) = stack(&patches, netcfg.num_classes)?;
            loss_sum += trainer.step(&x, &t, lr)?.loss;
            n += 1;
        }
        if n == 0 {
            break;
        }
        let validate = cfg.val_every > 0 && ((epoch + 1) % cfg.val_every == 0 || epoch + 1 == cfg.epochs);
        let val_soft_dice = if validate { Some(soft_dice(trainer.network(), val, cfg.patch, &cfg.loss)?) } else { None };
        let stats = EpochStats { epoch, steps: trainer.steps(), lr, train_loss: loss_sum / n as f64, val_soft_dice };
        on_epoch(&stats);
        history.push(stats);
        let hit = cfg.target_soft_dice.zip(val_soft_dice).is_some_and(|(t, d)| d >= t);
        if hit || cfg.max_steps.is_some_and(|m| trainer.steps() >= m) {
            break 'epochs;
        }
    }
    let steps = trainer.steps();
    Ok(TrainOutcome { network: trainer.into_network(), history, steps })
}

/// Trains fold `cfg.fold` of a `cfg.folds`-way split.
pub fn train_fold(
    cases: &[Case],
    cfg: &TrainConfig,
    netcfg: &NetworkConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let ids: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
    let split = make_folds(&ids, cfg.folds, cfg.seed)?
        .into_iter()
        .nth(cfg.fold)
        .ok_or_else(|| Error::Config(format!("fold {} of {}", cfg.fold, cfg.folds)))?;
    let pick = |names: &[String]| -> Vec<Case> { cases.iter().filter(|c| names.contains(&c.id)).cloned().collect() };
    train(&pick(&split.train), &pick(&split.val), cfg, netcfg, on_epoch)
}
