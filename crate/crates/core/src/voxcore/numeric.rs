use super::{Scalar, Tensor5};
use crate::{Error, Result};

/// Softmax over the channel axis at every voxel, stabilized by subtracting
/// the per-voxel maximum.
pub fn softmax_channels<T: Scalar>(t: &Tensor5<T>) -> Result<Tensor5<T>> {
    let d = t.dims();
    if d.channels == 0 {
        return Err(Error::invalid("softmax over zero channels"));
    }
    if !t.all_finite() {
        return Err(Error::NonFiniteLogits);
    }
    let n = d.spatial_len();
    let k = d.channels;
    let mut out = Tensor5::zeros(d);
    let src = t.data();
    let dst = out.data_mut();
    for b in 0..d.batch {
        let base = b * k * n;
        for v in 0..n {
            let mut m = T::neg_infinity();
            for c in 0..k {
                m = m.max(src[base + c * n + v]);
            }
            let mut sum = T::zero();
            for c in 0..k {
                let e = (src[base + c * n + v] - m).exp();
                dst[base + c * n + v] = e;
                sum = sum + e;
            }
            let inv = T::one() / sum;
            for c in 0..k {
                dst[base + c * n + v] = dst[base + c * n + v] * inv;
            }
        }
    }
    Ok(out)
}

/// Percentile with linear interpolation between order statistics at rank
/// `p / 100 * (n - 1)`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty sequence"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, p)
}

/// As [`percentile`] for input already sorted ascending.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::invalid("percentile of an empty sequence"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::invalid(format!("percentile {p} outside [0, 100]")));
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}
