//! Soft dice + cross-entropy training objective with exact gradients with
//! respect to the pre-softmax logits.

use serde::{Deserialize, Serialize};

use crate::{Dims5, Error, Result, Scalar, Tensor5};

/// Probabilities below this are clamped inside the logarithm.
pub const CE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiceAggregation {
    /// Classes `1..K`; background excluded.
    #[default]
    MeanOverForeground,
    MeanOverAll,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub smooth: f64,
    /// One positive weight per class. Weights scale each class's
    /// cross-entropy term and turn the dice mean into a weighted mean.
    pub class_weights: Option<Vec<f64>>,
    pub dice_aggregation: DiceAggregation,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { smooth: 1e-5, class_weights: None, dice_aggregation: DiceAggregation::default() }
    }
}

impl LossConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.smooth >= 0.0) {
            return Err(Error::Config(format!("smooth must be >= 0, got {}", self.smooth)));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != classes || w.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::Config(format!("need {classes} positive class weights, got {w:?}")));
            }
        }
        Ok(())
    }

    fn weight(&self, c: usize) -> f64 {
        self.class_weights.as_ref().map_or(1.0, |w| w[c])
    }

    fn dice_classes(&self, k: usize) -> std::ops::Range<usize> {
        match self.dice_aggregation {
            DiceAggregation::MeanOverForeground if k > 1 => 1..k,
            _ => 0..k,
        }
    }
}

/// One-hot encoding of labels laid out as (batch, D, H, W).
pub fn one_hot<T: Scalar>(labels: &[u8], dims: Dims5) -> Result<Tensor5<T>> {
    let n = dims.spatial_len();
    if labels.len() != dims.batch * n {
        return Err(Error::shape(format!("{} labels for target {dims}", labels.len())));
    }
    let mut t = Tensor5::zeros(dims);
    for b in 0..dims.batch {
        for (v, &l) in labels[b * n..(b + 1) * n].iter().enumerate() {
            if l as usize >= dims.channels {
                return Err(Error::invalid(format!("label {l} outside {} classes", dims.channels)));
            }
            t.data_mut()[(b * dims.channels + l as usize) * n + v] = T::one();
        }
    }
    Ok(t)
}

fn check_pair<T: Scalar>(pred: &Tensor5<T>, target: &Tensor5<T>) -> Result<()> {
    if pred.dims() != target.dims() {
        return Err(Error::shape(format!("prediction {} vs target {}", pred.dims(), target.dims())));
    }
    Ok(())
}

/// Per-class sums (intersection, prediction mass, target mass) over all
/// voxels of the batch.
fn class_sums<T: Scalar>(pred: &Tensor5<T>, target: &Tensor5<T>) -> Vec<[f64; 3]> {
    let d = pred.dims();
    let n = d.spatial_len();
    let mut s = vec![[0.0; 3]; d.channels];
    for b in 0..d.batch {
        for (c, acc) in s.iter_mut().enumerate() {
            let p = pred.channel(b, c);
            let t = target.channel(b, c);
            for v in 0..n {
                let (pv, tv) = (p[v].to_f64().unwrap(), t[v].to_f64().unwrap());
                acc[0] += pv * tv;
                acc[1] += pv;
                acc[2] += tv;
            }
        }
    }
    s
}

fn dice_from_sums(i: f64, p: f64, t: f64, smooth: f64) -> f64 {
    let den = p + t + smooth;
    if den == 0.0 {
        1.0
    } else {
        (2.0 * i + smooth) / den
    }
}

/// Soft dice per class: `(2 sum(p t) + smooth) / (sum p + sum t + smooth)`,
/// with `0/0` read as 1.
pub fn dice_coefficient<T: Scalar>(pred: &Tensor5<T>, target: &Tensor5<T>, smooth: f64) -> Result<Vec<f64>> {
    check_pair(pred, target)?;
    Ok(class_sums(pred, target).iter().map(|&[i, p, t]| dice_from_sums(i, p, t, smooth)).collect())
}

fn aggregate(dsc: &[f64], cfg: &LossConfig) -> f64 {
    let classes = cfg.dice_classes(dsc.len());
    let wsum: f64 = classes.clone().map(|c| cfg.weight(c)).sum();
    classes.map(|c| cfg.weight(c) * dsc[c]).sum::<f64>() / wsum
}

/// `1 - aggregate(dice per class)`.
pub fn dice_loss<T: Scalar>(pred: &Tensor5<T>, target: &Tensor5<T>, cfg: &LossConfig) -> Result<f64> {
    let dsc = dice_coefficient(pred, target, cfg.smooth)?;
    Ok(1.0 - aggregate(&dsc, cfg))
}

/// Mean over voxels of `-sum_c t_c ln(max(p_c, 1e-7))`.
pub fn ce_loss<T: Scalar>(pred: &Tensor5<T>, target: &Tensor5<T>) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(weighted_ce(pred, target, &LossConfig::default()))
}

fn weighted_ce<T: Scalar>(pred: &Tensor5<T>, target: &Tensor5<T>, cfg: &LossConfig) -> f64 {
    let d = pred.dims();
    let n = d.spatial_len();
    let mut sum = 0.0;
    for b in 0..d.batch {
        for c in 0..d.channels {
            let w = cfg.weight(c);
            for (p, t) in pred.channel(b, c).iter().zip(target.channel(b, c)) {
                let t = t.to_f64().unwrap();
                if t != 0.0 {
                    sum -= w * t * p.to_f64().unwrap().max(CE_CLAMP).ln();
                }
            }
        }
    }
    sum / (d.batch * n) as f64
}

#[derive(Clone, Debug)]
pub struct LossOutput<T: Scalar> {
    pub total: f64,
    pub dice: f64,
    pub ce: f64,
    /// Per-class soft dice (all classes).
    pub dice_per_class: Vec<f64>,
    pub grad_logits: Tensor5<T>,
}

/// `dice_loss + ce_loss` for softmax probabilities `pred`, with the exact
/// gradient with respect to the logits that produced them.
pub fn total_loss<T: Scalar>(pred: &Tensor5<T>, target: &Tensor5<T>, cfg: &LossConfig) -> Result<LossOutput<T>> {
    check_pair(pred, target)?;
    let d = pred.dims();
    cfg.validate(d.channels)?;
    let k = d.channels;
    let n = d.spatial_len();
    let sums = class_sums(pred, target);
    let dsc: Vec<f64> = sums.iter().map(|&[i, p, t]| dice_from_sums(i, p, t, cfg.smooth)).collect();
    let dice = 1.0 - aggregate(&dsc, cfg);
    let ce = weighted_ce(pred, target, cfg);

    // dL/dp for each class: dice part -w_c/W * dD_c/dp, CE part -w_c t / (V p).
    let classes = cfg.dice_classes(k);
    let wsum: f64 = classes.clone().map(|c| cfg.weight(c)).sum();
    let voxels = (d.batch * n) as f64;
    let mut grad = Tensor5::<T>::zeros(d);
    let mut dp = vec![0.0f64; k];
    for b in 0..d.batch {
        for v in 0..n {
            let idx = |c: usize| (b * k + c) * n + v;
            for (c, g) in dp.iter_mut().enumerate() {
                let p = pred.data()[idx(c)].to_f64().unwrap();
                let t = target.data()[idx(c)].to_f64().unwrap();
                let mut acc = 0.0;
                if classes.contains(&c) {
                    let [i, ps, ts] = sums[c];
                    let u = ps + ts + cfg.smooth;
                    if u != 0.0 {
                        let dd = (2.0 * t * u - (2.0 * i + cfg.smooth)) / (u * u);
                        acc -= cfg.weight(c) / wsum * dd;
                    }
                }
                if t != 0.0 && p >= CE_CLAMP {
                    acc -= cfg.weight(c) * t / (voxels * p);
                }
                *g = acc;
            }
            let dot: f64 = (0..k).map(|c| pred.data()[idx(c)].to_f64().unwrap() * dp[c]).sum();
            for c in 0..k {
                let p = pred.data()[idx(c)].to_f64().unwrap();
                grad.data_mut()[idx(c)] = T::c(p * (dp[c] - dot));
            }
        }
    }
    Ok(LossOutput { total: dice + ce, dice, ce, dice_per_class: dsc, grad_logits: grad })
}
