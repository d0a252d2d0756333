//! Self-attention restricted to 1D lines along one spatial axis.
//!
//! Q/K/V come from one pointwise projection to 3C channels (q, k, v in that
//! channel order). Every line along the chosen axis is an independent
//! sequence; per head, `out = softmax(Q K^T / sqrt(d_head)) V`.

use super::conv::{conv3d, ConvSpec};
use crate::voxcore::Axis;
use crate::{Dims5, Error, Result, Scalar, Tensor5};

/// Offsets of the first element of every line along `axis`, within one
/// channel block, and the stride between consecutive tokens.
pub(crate) fn line_layout(spatial: [usize; 3], axis: Axis) -> (Vec<usize>, usize) {
    let [d, h, w] = spatial;
    match axis {
        Axis::Depth => ((0..h * w).collect(), h * w),
        Axis::Height => {
            let starts = (0..d).flat_map(|z| (0..w).map(move |x| z * h * w + x)).collect();
            (starts, w)
        }
        Axis::Width => ((0..d * h).map(|r| r * w).collect(), 1),
    }
}

fn gather<T: Scalar>(src: &[T], n: usize, ch0: usize, c: usize, start: usize, stride: usize, len: usize, dst: &mut [T]) {
    for ci in 0..c {
        let base = (ch0 + ci) * n + start;
        for t in 0..len {
            dst[t * c + ci] = src[base + t * stride];
        }
    }
}

fn scatter<T: Scalar>(src: &[T], n: usize, ch0: usize, c: usize, start: usize, stride: usize, len: usize, dst: &mut [T]) {
    for ci in 0..c {
        let base = (ch0 + ci) * n + start;
        for t in 0..len {
            dst[base + t * stride] = src[t * c + ci];
        }
    }
}

/// Attention over token-major rows (`len` x `c`) for channels
/// `[h0, h0 + dh)`; writes the same channel slice of `out`.
fn attend_head<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    len: usize,
    c: usize,
    h0: usize,
    dh: usize,
    probs: &mut [T],
    out: &mut [T],
) {
    let scale = T::one() / T::c(dh as f64).sqrt();
    for i in 0..len {
        let qi = &q[i * c + h0..i * c + h0 + dh];
        let mut m = T::neg_infinity();
        for j in 0..len {
            let kj = &k[j * c + h0..j * c + h0 + dh];
            let s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
            probs[j] = s;
            m = m.max(s);
        }
        let mut sum = T::zero();
        for p in probs[..len].iter_mut() {
            *p = (*p - m).exp();
            sum = sum + *p;
        }
        let inv = T::one() / sum;
        let oi = &mut out[i * c + h0..i * c + h0 + dh];
        oi.iter_mut().for_each(|o| *o = T::zero());
        for j in 0..len {
            let p = probs[j] * inv;
            probs[j] = p;
            let vj = &v[j * c + h0..j * c + h0 + dh];
            for (o, &vv) in oi.iter_mut().zip(vj) {
                *o = *o + p * vv;
            }
        }
    }
}

fn check_heads(c: usize, heads: usize) -> Result<usize> {
    if heads == 0 || c % heads != 0 {
        return Err(Error::invalid(format!("{c} channels not divisible by {heads} heads")));
    }
    Ok(c / heads)
}

/// Attention core along `axis` given the stacked projection `qkv`
/// (N, 3C, D, H, W). Returns (N, C, D, H, W).
pub fn axial_core_forward<T: Scalar>(qkv: &Tensor5<T>, axis: Axis, heads: usize) -> Result<Tensor5<T>> {
    let d = qkv.dims();
    if d.channels % 3 != 0 {
        return Err(Error::shape(format!("qkv tensor {d} does not have 3C channels")));
    }
    let c = d.channels / 3;
    let dh = check_heads(c, heads)?;
    let sp = d.spatial();
    let len = sp[axis.index()];
    let n = d.spatial_len();
    let (starts, stride) = line_layout(sp, axis);
    let mut out = Tensor5::zeros(d.with_channels(c));
    let mut q = vec![T::zero(); len * c];
    let mut k = q.clone();
    let mut v = q.clone();
    let mut o = q.clone();
    let mut probs = vec![T::zero(); len];
    for b in 0..d.batch {
        let src = qkv.item(b);
        for &s in &starts {
            gather(src, n, 0, c, s, stride, len, &mut q);
            gather(src, n, c, c, s, stride, len, &mut k);
            gather(src, n, 2 * c, c, s, stride, len, &mut v);
            for h in 0..heads {
                attend_head(&q, &k, &v, len, c, h * dh, dh, &mut probs, &mut o);
            }
            scatter(&o, n, 0, c, s, stride, len, out.item_mut(b));
        }
    }
    Ok(out)
}

/// Gradient of the attention core with respect to its stacked `qkv` input.
pub fn axial_core_backward<T: Scalar>(
    qkv: &Tensor5<T>,
    axis: Axis,
    heads: usize,
    grad_out: &Tensor5<T>,
) -> Result<Tensor5<T>> {
    let d = qkv.dims();
    let c = d.channels / 3;
    let dh = check_heads(c, heads)?;
    if grad_out.dims() != d.with_channels(c) {
        return Err(Error::shape(format!("attention gradient {} vs qkv {d}", grad_out.dims())));
    }
    let sp = d.spatial();
    let len = sp[axis.index()];
    let n = d.spatial_len();
    let (starts, stride) = line_layout(sp, axis);
    let scale = T::one() / T::c(dh as f64).sqrt();
    let mut dqkv = Tensor5::zeros(d);
    let buf = || vec![T::zero(); len * c];
    let (mut q, mut k, mut v, mut go) = (buf(), buf(), buf(), buf());
    let (mut dq, mut dk, mut dv) = (buf(), buf(), buf());
    let mut p = vec![T::zero(); len * len];
    let mut dp = vec![T::zero(); len * len];
    for b in 0..d.batch {
        let src = qkv.item(b);
        let gsrc = grad_out.item(b);
        for &s in &starts {
            gather(src, n, 0, c, s, stride, len, &mut q);
            gather(src, n, c, c, s, stride, len, &mut k);
            gather(src, n, 2 * c, c, s, stride, len, &mut v);
            gather(gsrc, n, 0, c, s, stride, len, &mut go);
            dq.fill(T::zero());
            dk.fill(T::zero());
            dv.fill(T::zero());
            for h in 0..heads {
                let h0 = h * dh;
                let hs = h0..h0 + dh;
                // recompute probabilities
                for i in 0..len {
                    let row = &mut p[i * len..(i + 1) * len];
                    let mut m = T::neg_infinity();
                    for j in 0..len {
                        let s = q[i * c..][hs.clone()].iter().zip(&k[j * c..][hs.clone()]).map(|(&a, &b)| a * b).sum::<T>() * scale;
                        row[j] = s;
                        m = m.max(s);
                    }
                    let mut sum = T::zero();
                    for r in row.iter_mut() {
                        *r = (*r - m).exp();
                        sum = sum + *r;
                    }
                    row.iter_mut().for_each(|r| *r = *r / sum);
                }
                for i in 0..len {
                    let goi = &go[i * c..][hs.clone()];
                    let mut row_dot = T::zero();
                    for j in 0..len {
                        let g = goi.iter().zip(&v[j * c..][hs.clone()]).map(|(&a, &b)| a * b).sum::<T>();
                        dp[i * len + j] = g;
                        row_dot = row_dot + g * p[i * len + j];
                        let pij = p[i * len + j];
                        for (dvv, &gg) in dv[j * c..][hs.clone()].iter_mut().zip(goi) {
                            *dvv = *dvv + pij * gg;
                        }
                    }
                    for j in 0..len {
                        let ds = p[i * len + j] * (dp[i * len + j] - row_dot) * scale;
                        if ds.is_zero() {
                            continue;
                        }
                        for cc in hs.clone() {
                            dq[i * c + cc] = dq[i * c + cc] + ds * k[j * c + cc];
                            dk[j * c + cc] = dk[j * c + cc] + ds * q[i * c + cc];
                        }
                    }
                }
            }
            let dst = dqkv.item_mut(b);
            scatter(&dq, n, 0, c, s, stride, len, dst);
            scatter(&dk, n, c, c, s, stride, len, dst);
            scatter(&dv, n, 2 * c, c, s, stride, len, dst);
        }
    }
    Ok(dqkv)
}

/// Dense attention treating every voxel of an item as one sequence; the
/// quadratic baseline axial attention is compared against.
pub fn full_attention_forward<T: Scalar>(qkv: &Tensor5<T>, heads: usize) -> Result<Tensor5<T>> {
    let d = qkv.dims();
    if d.channels % 3 != 0 {
        return Err(Error::shape(format!("qkv tensor {d} does not have 3C channels")));
    }
    let c = d.channels / 3;
    let dh = check_heads(c, heads)?;
    let n = d.spatial_len();
    let mut out = Tensor5::zeros(d.with_channels(c));
    let buf = || vec![T::zero(); n * c];
    let (mut q, mut k, mut v, mut o) = (buf(), buf(), buf(), buf());
    let mut probs = vec![T::zero(); n];
    for b in 0..d.batch {
        let src = qkv.item(b);
        gather(src, n, 0, c, 0, 1, n, &mut q);
        gather(src, n, c, c, 0, 1, n, &mut k);
        gather(src, n, 2 * c, c, 0, 1, n, &mut v);
        for h in 0..heads {
            attend_head(&q, &k, &v, n, c, h * dh, dh, &mut probs, &mut o);
        }
        scatter(&o, n, 0, c, 0, 1, n, out.item_mut(b));
    }
    Ok(out)
}

/// Learned positional embedding for one axis, stored as (1, C, cap, 1, 1),
/// (1, C, 1, cap, 1) or (1, C, 1, 1, cap) so it broadcasts along the other
/// two axes.
pub fn position_dims(axis: Axis, channels: usize, capacity: usize) -> Dims5 {
    let mut sp = [1; 3];
    sp[axis.index()] = capacity;
    Dims5::new(1, channels, sp[0], sp[1], sp[2])
}

fn pos_axis_capacity<T: Scalar>(pos: &Tensor5<T>, axis: Axis) -> usize {
    pos.dims().spatial()[axis.index()]
}

/// `x + pos` with `pos` broadcast over batch and the two other axes, using
/// the first `len(axis)` rows of the embedding.
pub fn add_position<T: Scalar>(x: &mut Tensor5<T>, pos: &Tensor5<T>, axis: Axis) -> Result<()> {
    let d = x.dims();
    let cap = pos_axis_capacity(pos, axis);
    let len = d.spatial()[axis.index()];
    if pos.dims() != position_dims(axis, d.channels, cap) {
        return Err(Error::shape(format!("positional embedding {} for {} channels", pos.dims(), d.channels)));
    }
    if len > cap {
        return Err(Error::PositionCapacity { len, capacity: cap });
    }
    let (starts, stride) = line_layout(d.spatial(), axis);
    for b in 0..d.batch {
        for c in 0..d.channels {
            let table = &pos.channel(0, c)[..len];
            let ch = x.channel_mut(b, c);
            for &s in &starts {
                for (t, &e) in table.iter().enumerate() {
                    ch[s + t * stride] = ch[s + t * stride] + e;
                }
            }
        }
    }
    Ok(())
}

/// Accumulates the embedding gradient: sums `grad` over batch and the two
/// other axes into the first `len(axis)` rows of `grad_pos`.
pub fn position_grad<T: Scalar>(grad: &Tensor5<T>, axis: Axis, grad_pos: &mut Tensor5<T>) {
    let d = grad.dims();
    let len = d.spatial()[axis.index()];
    let (starts, stride) = line_layout(d.spatial(), axis);
    for c in 0..d.channels {
        let mut acc = vec![T::zero(); len];
        for b in 0..d.batch {
            let ch = grad.channel(b, c);
            for &s in &starts {
                for (t, a) in acc.iter_mut().enumerate() {
                    *a = *a + ch[s + t * stride];
                }
            }
        }
        for (g, a) in grad_pos.channel_mut(0, c).iter_mut().zip(acc) {
            *g = *g + a;
        }
    }
}

/// Projection weights of one attention branch.
#[derive(Clone, Debug, PartialEq)]
pub struct AxialAttention<T: Scalar> {
    /// (3C, C, 1, 1, 1): rows [0, C) query, [C, 2C) key, [2C, 3C) value.
    pub qkv: Tensor5<T>,
    pub heads: usize,
}

impl<T: Scalar> AxialAttention<T> {
    pub fn zeros(channels: usize, heads: usize) -> Self {
        AxialAttention { qkv: Tensor5::zeros(Dims5::new(3 * channels, channels, 1, 1, 1)), heads }
    }

    pub fn channels(&self) -> usize {
        self.qkv.dims().channels
    }

    pub fn project(&self, x: &Tensor5<T>) -> Result<Tensor5<T>> {
        conv3d(x, &self.qkv, None, ConvSpec::POINT)
    }
}

/// Adds the axis positional embedding to `x`, projects to Q/K/V, and runs
/// attention along every line of `axis`. Output has the shape of `x`.
pub fn axial_attention<T: Scalar>(
    x: &Tensor5<T>,
    axis: Axis,
    params: &AxialAttention<T>,
    pos_embed: &Tensor5<T>,
) -> Result<Tensor5<T>> {
    if x.dims().channels != params.channels() {
        return Err(Error::shape(format!(
            "input has {} channels, attention expects {}",
            x.dims().channels,
            params.channels()
        )));
    }
    let mut xp = x.clone();
    add_position(&mut xp, pos_embed, axis)?;
    let qkv = params.project(&xp)?;
    axial_core_forward(&qkv, axis, params.heads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    fn random(dims: Dims5, rng: &mut Rng) -> Tensor5<f64> {
        Tensor5::from_fn(dims, |_| rng.normal())
    }

    #[test]
    fn single_token_returns_value_projection() {
        let mut rng = Rng::new(2);
        let c = 4;
        let x = random(Dims5::new(1, c, 1, 1, 1), &mut rng);
        let params = AxialAttention { qkv: random(Dims5::new(3 * c, c, 1, 1, 1), &mut rng), heads: 2 };
        let pos = random(position_dims(Axis::Width, c, 3), &mut rng);
        let out = axial_attention(&x, Axis::Width, &params, &pos).unwrap();
        let mut xp = x.clone();
        add_position(&mut xp, &pos, Axis::Width).unwrap();
        let qkv = params.project(&xp).unwrap();
        for ch in 0..c {
            assert!((out.data()[ch] - qkv.data()[2 * c + ch]).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_tokens_give_uniform_output() {
        let mut rng = Rng::new(3);
        let c = 2;
        let x = Tensor5::from_fn(Dims5::new(1, c, 1, 1, 6), |[_, ch, ..]| ch as f64 + 0.5);
        let params = AxialAttention { qkv: random(Dims5::new(3 * c, c, 1, 1, 1), &mut rng), heads: 1 };
        let pos = Tensor5::zeros(position_dims(Axis::Width, c, 6));
        let out = axial_attention(&x, Axis::Width, &params, &pos).unwrap();
        for ch in 0..c {
            let row = out.channel(0, ch);
            assert!(row.iter().all(|&v| (v - row[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn capacity_overflow_is_an_error() {
        let x = Tensor5::<f32>::zeros(Dims5::new(1, 2, 1, 1, 5));
        let params = AxialAttention::zeros(2, 1);
        let pos = Tensor5::zeros(position_dims(Axis::Width, 2, 4));
        assert!(matches!(
            axial_attention(&x, Axis::Width, &params, &pos),
            Err(Error::PositionCapacity { len: 5, capacity: 4 })
        ));
    }

    #[test]
    fn heads_must_divide_channels() {
        let x = Tensor5::<f32>::zeros(Dims5::new(1, 3, 1, 1, 2));
        let params = AxialAttention::zeros(3, 2);
        let pos = Tensor5::zeros(position_dims(Axis::Width, 3, 2));
        assert!(axial_attention(&x, Axis::Width, &params, &pos).is_err());
    }

    #[test]
    fn line_layout_visits_every_voxel_once() {
        let sp = [3, 4, 5];
        for axis in Axis::ALL {
            let (starts, stride) = line_layout(sp, axis);
            let len = sp[axis.index()];
            let mut seen = vec![0; 60];
            for s in starts {
                for t in 0..len {
                    seen[s + t * stride] += 1;
                }
            }
            assert!(seen.iter().all(|&n| n == 1), "{axis:?}");
        }
    }

    #[test]
    fn core_backward_matches_finite_differences() {
        let mut rng = Rng::new(5);
        for (axis, heads) in [(Axis::Depth, 1), (Axis::Height, 2), (Axis::Width, 2)] {
            let mut qkv = random(Dims5::new(2, 12, 3, 4, 2), &mut rng);
            let g = random(Dims5::new(2, 4, 3, 4, 2), &mut rng);
            let dq = axial_core_backward(&qkv, axis, heads, &g).unwrap();
            let h = 1e-6;
            for i in (0..qkv.len()).step_by(7) {
                let o = qkv.data()[i];
                qkv.data_mut()[i] = o + h;
                let up = axial_core_forward(&qkv, axis, heads).unwrap().dot(&g);
                qkv.data_mut()[i] = o - h;
                let down = axial_core_forward(&qkv, axis, heads).unwrap().dot(&g);
                qkv.data_mut()[i] = o;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - dq.data()[i]).abs() < 1e-6, "{axis:?} {i}: {fd} vs {}", dq.data()[i]);
            }
        }
    }

    #[test]
    fn full_attention_equals_axial_on_a_single_line() {
        let mut rng = Rng::new(6);
        let qkv = random(Dims5::new(1, 6, 1, 1, 7), &mut rng);
        let a = axial_core_forward(&qkv, Axis::Width, 2).unwrap();
        let f = full_attention_forward(&qkv, 2).unwrap();
        assert!(a.max_abs_diff(&f) < 1e-12);
    }
}
