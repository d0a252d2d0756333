//! Instance normalization followed by a pointwise activation.

use super::params::Params;
use crate::{Dims5, Error, Result, Scalar, Tensor5};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::LeakyRelu(slope) if v < T::zero() => v * T::c(slope),
            _ => v,
        }
    }

    #[inline]
    fn derivative<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::LeakyRelu(slope) if pre < T::zero() => T::c(slope),
            _ => T::one(),
        }
    }
}

/// Intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T: Scalar> {
    normalized: Tensor5<T>,
    pre_activation: Tensor5<T>,
    sd: Vec<T>,
}

impl<T: Scalar> NormCache<T> {
    /// Pre-activation values, i.e. the inputs of the activation.
    pub fn pre_activation(&self) -> &Tensor5<T> {
        &self.pre_activation
    }
}

/// Per (batch, channel): subtract the spatial mean, divide by the spatial
/// standard deviation plus `eps`, apply `scale`/`shift`, then `act`.
pub fn instance_norm_act<T: Scalar>(
    x: &Tensor5<T>,
    scale: &[T],
    shift: &[T],
    eps: f64,
    act: Activation,
) -> Result<(Tensor5<T>, NormCache<T>)> {
    let d = x.dims();
    let n = d.spatial_len();
    if n < 2 {
        return Err(Error::invalid(format!("instance norm needs at least 2 voxels, got {n}")));
    }
    if scale.len() != d.channels || shift.len() != d.channels {
        return Err(Error::shape(format!(
            "norm affine length {}/{} != {} channels",
            scale.len(),
            shift.len(),
            d.channels
        )));
    }
    let inv_n = T::one() / T::c(n as f64);
    let eps = T::c(eps);
    let mut normalized = Tensor5::zeros(d);
    let mut pre = Tensor5::zeros(d);
    let mut out = Tensor5::zeros(d);
    let mut sds = Vec::with_capacity(d.batch * d.channels);
    for b in 0..d.batch {
        for c in 0..d.channels {
            let src = x.channel(b, c);
            let mean = src.iter().copied().sum::<T>() * inv_n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let sd = var.sqrt();
            sds.push(sd);
            let inv = T::one() / (sd + eps);
            let xn = normalized.channel_mut(b, c);
            for (o, &v) in xn.iter_mut().zip(src) {
                *o = (v - mean) * inv;
            }
            let pr = pre.channel_mut(b, c);
            for (p, &v) in pr.iter_mut().zip(normalized.channel(b, c)) {
                *p = v * scale[c] + shift[c];
            }
            for (o, &p) in out.channel_mut(b, c).iter_mut().zip(pre.channel(b, c)) {
                *o = act.apply(p);
            }
        }
    }
    Ok((out, NormCache { normalized, pre_activation: pre, sd: sds }))
}

/// Returns (input gradient, scale gradient, shift gradient).
pub fn instance_norm_act_backward<T: Scalar>(
    cache: &NormCache<T>,
    scale: &[T],
    eps: f64,
    act: Activation,
    grad_out: &Tensor5<T>,
) -> (Tensor5<T>, Vec<T>, Vec<T>) {
    let d: Dims5 = grad_out.dims();
    let n = d.spatial_len();
    let nt = T::c(n as f64);
    let eps = T::c(eps);
    let mut dx = Tensor5::zeros(d);
    let mut dscale = vec![T::zero(); d.channels];
    let mut dshift = vec![T::zero(); d.channels];
    let mut dxhat = vec![T::zero(); n];
    for b in 0..d.batch {
        for c in 0..d.channels {
            let g = grad_out.channel(b, c);
            let pre = cache.pre_activation.channel(b, c);
            let xhat = cache.normalized.channel(b, c);
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for i in 0..n {
                let dy = g[i] * act.derivative(pre[i]);
                dscale[c] = dscale[c] + dy * xhat[i];
                dshift[c] = dshift[c] + dy;
                dxhat[i] = dy * scale[c];
                sum_dxhat = sum_dxhat + dxhat[i];
                sum_dxhat_xhat = sum_dxhat_xhat + dxhat[i] * xhat[i];
            }
            let sd = cache.sd[b * d.channels + c];
            let s = sd + eps;
            let mean_dxhat = sum_dxhat / nt;
            // d sd / dx_i = (x_i - mean) / (n sd); zero-variance channels have no such term.
            let coupling = if sd > T::zero() { sum_dxhat_xhat / (nt * sd) } else { T::zero() };
            for (i, o) in dx.channel_mut(b, c).iter_mut().enumerate() {
                *o = (dxhat[i] - mean_dxhat) / s - xhat[i] * coupling;
            }
        }
    }
    (dx, dscale, dshift)
}

/// Learned affine parameters, stored as (1, C, 1, 1, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceNorm<T: Scalar> {
    pub scale: Tensor5<T>,
    pub shift: Tensor5<T>,
    pub eps: f64,
    pub activation: Activation,
}

impl<T: Scalar> InstanceNorm<T> {
    pub fn new(channels: usize, eps: f64, activation: Activation) -> Self {
        let dims = Dims5::new(1, channels, 1, 1, 1);
        InstanceNorm {
            scale: Tensor5::filled(dims, T::one()),
            shift: Tensor5::zeros(dims),
            eps,
            activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        InstanceNorm {
            scale: Tensor5::zeros(self.scale.dims()),
            shift: Tensor5::zeros(self.shift.dims()),
            ..*self
        }
    }

    pub fn forward(&self, x: &Tensor5<T>) -> Result<(Tensor5<T>, NormCache<T>)> {
        instance_norm_act(x, self.scale.data(), self.shift.data(), self.eps, self.activation)
    }

    pub fn backward(&self, cache: &NormCache<T>, grad_out: &Tensor5<T>, grad: &mut Self) -> Tensor5<T> {
        let (dx, ds, db) =
            instance_norm_act_backward(cache, self.scale.data(), self.eps, self.activation, grad_out);
        for (g, v) in grad.scale.data_mut().iter_mut().zip(ds) {
            *g = *g + v;
        }
        for (g, v) in grad.shift.data_mut().iter_mut().zip(db) {
            *g = *g + v;
        }
        dx
    }
}

impl<T: Scalar> Params<T> for InstanceNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor5<T>)) {
        f(&format!("{prefix}.scale"), &self.scale);
        f(&format!("{prefix}.shift"), &self.shift);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor5<T>)) {
        f(&format!("{prefix}.scale"), &mut self.scale);
        f(&format!("{prefix}.shift"), &mut self.shift);
    }
}
