//! 3D cross-correlation, its two adjoints, and the layers built on them.
//!
//! Kernels are cubic. The forward pass lowers each block of output depth
//! planes to an im2col matrix and runs one GEMM per block; the data adjoint
//! (which is also the transposed convolution) scatters the GEMM result back
//! with col2im.

use super::params::Params;
use crate::voxcore::{gemm, MatMut, MatRef};
use crate::{Dims5, Error, Result, Rng, Scalar, Tensor5};

/// Elements per im2col block; bounds scratch memory independent of volume size.
const IM2COL_BUDGET: usize = 1 << 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const SAME3: ConvSpec = ConvSpec { kernel: 3, stride: 1, padding: 1 };
    pub const DOWN3: ConvSpec = ConvSpec { kernel: 3, stride: 2, padding: 1 };
    pub const POINT: ConvSpec = ConvSpec { kernel: 1, stride: 1, padding: 0 };
    pub const UP2: ConvSpec = ConvSpec { kernel: 2, stride: 2, padding: 0 };

    pub fn output_len(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        (padded >= self.kernel && self.stride > 0).then(|| (padded - self.kernel) / self.stride + 1)
    }

    pub fn output_spatial(&self, s: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = self.output_len(s[a]).ok_or_else(|| {
                Error::shape(format!("spatial extent {} too small for kernel {}", s[a], self.kernel))
            })?;
        }
        Ok(out)
    }

    /// Spatial size produced by the transposed operator from `s`.
    pub fn transposed_spatial(&self, s: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let full = (s[a].max(1) - 1) * self.stride + self.kernel;
            if full < 2 * self.padding + 1 {
                return Err(Error::shape("transposed output would be empty"));
            }
            out[a] = full - 2 * self.padding;
        }
        Ok(out)
    }

    fn is_pointwise(&self) -> bool {
        *self == ConvSpec::POINT
    }

    fn taps(&self) -> usize {
        self.kernel * self.kernel * self.kernel
    }
}

/// Output positions `o` in `[0, out_len)` whose tap `kk` lands inside `[0, n)`.
fn valid_range(n: usize, out_len: usize, spec: ConvSpec, kk: usize) -> (usize, usize) {
    let (s, p) = (spec.stride, spec.padding);
    let lo = if kk >= p { 0 } else { (p - kk).div_ceil(s) };
    if n + p < kk + 1 {
        return (0, 0);
    }
    let hi = ((n - 1 + p - kk) / s + 1).min(out_len);
    (lo.min(hi), hi)
}

fn check_weight<T: Scalar>(w: &Tensor5<T>, cin: usize, spec: ConvSpec) -> Result<()> {
    let d = w.dims();
    if d.channels != cin || d.depth != spec.kernel || d.height != spec.kernel || d.width != spec.kernel {
        return Err(Error::shape(format!(
            "weight {d} incompatible with {cin} input channels and kernel {}",
            spec.kernel
        )));
    }
    Ok(())
}

struct Lowering {
    cin: usize,
    input: [usize; 3],
    output: [usize; 3],
    spec: ConvSpec,
}

impl Lowering {
    fn rows(&self) -> usize {
        self.cin * self.spec.taps()
    }

    fn plane(&self) -> usize {
        self.output[1] * self.output[2]
    }

    fn planes_per_block(&self) -> usize {
        (IM2COL_BUDGET / (self.rows() * self.plane()).max(1)).clamp(1, self.output[0])
    }

    fn blocks(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.planes_per_block();
        let od = self.output[0];
        (0..od).step_by(step).map(move |z0| (z0, (z0 + step).min(od)))
    }

    /// Fills `cols` (rows x block columns) from one batch item.
    fn im2col<T: Scalar>(&self, src: &[T], z0: usize, z1: usize, cols: &mut [T]) {
        let k = self.spec.kernel;
        let [d, h, w] = self.input;
        let [od, oh, ow] = self.output;
        let plane = oh * ow;
        let m = (z1 - z0) * plane;
        let (s, p) = (self.spec.stride, self.spec.padding);
        for ci in 0..self.cin {
            for kd in 0..k {
                let (zlo, zhi) = valid_range(d, od, self.spec, kd);
                let (zlo, zhi) = (zlo.max(z0), zhi.min(z1));
                for kh in 0..k {
                    let (ylo, yhi) = valid_range(h, oh, self.spec, kh);
                    for kw in 0..k {
                        let (xlo, xhi) = valid_range(w, ow, self.spec, kw);
                        let r = ((ci * k + kd) * k + kh) * k + kw;
                        let row = &mut cols[r * m..(r + 1) * m];
                        row.fill(T::zero());
                        if xlo >= xhi {
                            continue;
                        }
                        for oz in zlo..zhi {
                            let iz = oz * s + kd - p;
                            for oy in ylo..yhi {
                                let iy = oy * s + kh - p;
                                let srow = &src[((ci * d + iz) * h + iy) * w..][..w];
                                let drow = &mut row[(oz - z0) * plane + oy * ow..][..ow];
                                if s == 1 {
                                    let ix0 = xlo + kw - p;
                                    drow[xlo..xhi].copy_from_slice(&srow[ix0..ix0 + (xhi - xlo)]);
                                } else {
                                    for ox in xlo..xhi {
                                        drow[ox] = srow[ox * s + kw - p];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adds `cols` back into one batch item (adjoint of `im2col`).
    fn col2im<T: Scalar>(&self, cols: &[T], z0: usize, z1: usize, dst: &mut [T]) {
        let k = self.spec.kernel;
        let [d, h, w] = self.input;
        let [od, oh, ow] = self.output;
        let plane = oh * ow;
        let m = (z1 - z0) * plane;
        let (s, p) = (self.spec.stride, self.spec.padding);
        for ci in 0..self.cin {
            for kd in 0..k {
                let (zlo, zhi) = valid_range(d, od, self.spec, kd);
                let (zlo, zhi) = (zlo.max(z0), zhi.min(z1));
                for kh in 0..k {
                    let (ylo, yhi) = valid_range(h, oh, self.spec, kh);
                    for kw in 0..k {
                        let (xlo, xhi) = valid_range(w, ow, self.spec, kw);
                        if xlo >= xhi {
                            continue;
                        }
                        let r = ((ci * k + kd) * k + kh) * k + kw;
                        let row = &cols[r * m..(r + 1) * m];
                        for oz in zlo..zhi {
                            let iz = oz * s + kd - p;
                            for oy in ylo..yhi {
                                let iy = oy * s + kh - p;
                                let drow = &mut dst[((ci * d + iz) * h + iy) * w..][..w];
                                let srow = &row[(oz - z0) * plane + oy * ow..][..ow];
                                for ox in xlo..xhi {
                                    let ix = ox * s + kw - p;
                                    drow[ix] = drow[ix] + srow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input` (N, Cin, D, H, W) with `weight`
/// (Cout, Cin, k, k, k), plus an optional per-output-channel bias.
pub fn conv3d<T: Scalar>(
    input: &Tensor5<T>,
    weight: &Tensor5<T>,
    bias: Option<&[T]>,
    spec: ConvSpec,
) -> Result<Tensor5<T>> {
    let di = input.dims();
    check_weight(weight, di.channels, spec)?;
    let cout = weight.dims().batch;
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::shape(format!("bias length {} != {cout} output channels", b.len())));
        }
    }
    let out_sp = spec.output_spatial(di.spatial())?;
    let dout = Dims5::new(di.batch, cout, out_sp[0], out_sp[1], out_sp[2]);
    let mut out = Tensor5::zeros(dout);
    let low = Lowering { cin: di.channels, input: di.spatial(), output: out_sp, spec };
    let k_rows = low.rows();
    let w = MatRef::row_major(weight.data(), cout, k_rows);
    let plane = low.plane();
    let vol = dout.spatial_len();

    if spec.is_pointwise() {
        for b in 0..di.batch {
            let x = MatRef::row_major(input.item(b), di.channels, vol);
            gemm(T::one(), w, x, T::zero(), MatMut::row_major(out.item_mut(b), cout, vol));
        }
    } else {
        let mut cols = Vec::new();
        for b in 0..di.batch {
            for (z0, z1) in low.blocks() {
                let m = (z1 - z0) * plane;
                cols.resize(k_rows * m, T::zero());
                low.im2col(input.item(b), z0, z1, &mut cols);
                let dst = &mut out.item_mut(b)[z0 * plane..];
                gemm(
                    T::one(),
                    w,
                    MatRef::row_major(&cols, k_rows, m),
                    T::zero(),
                    MatMut::strided(dst, cout, m, vol),
                );
            }
        }
    }
    if let Some(bias) = bias {
        for b in 0..dout.batch {
            for (c, &bv) in bias.iter().enumerate() {
                out.channel_mut(b, c).iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`conv3d`] with respect to its input: maps a tensor shaped like
/// the convolution output back to `input_spatial`. This is the transposed
/// convolution.
pub fn conv3d_input_grad<T: Scalar>(
    grad_out: &Tensor5<T>,
    weight: &Tensor5<T>,
    spec: ConvSpec,
    input_spatial: [usize; 3],
) -> Result<Tensor5<T>> {
    let dg = grad_out.dims();
    let wd = weight.dims();
    if wd.batch != dg.channels {
        return Err(Error::shape(format!(
            "weight {wd} has {} output channels, gradient has {}",
            wd.batch, dg.channels
        )));
    }
    check_weight(weight, wd.channels, spec)?;
    if spec.output_spatial(input_spatial)? != dg.spatial() {
        return Err(Error::shape(format!(
            "gradient spatial {:?} inconsistent with input spatial {input_spatial:?}",
            dg.spatial()
        )));
    }
    let cin = wd.channels;
    let cout = wd.batch;
    let din = Dims5::new(dg.batch, cin, input_spatial[0], input_spatial[1], input_spatial[2]);
    let mut dx = Tensor5::zeros(din);
    let low = Lowering { cin, input: input_spatial, output: dg.spatial(), spec };
    let k_rows = low.rows();
    let wt = MatRef::row_major(weight.data(), cout, k_rows).t();
    let plane = low.plane();
    let vol = dg.spatial_len();

    if spec.is_pointwise() {
        for b in 0..dg.batch {
            let g = MatRef::row_major(grad_out.item(b), cout, vol);
            gemm(T::one(), wt, g, T::zero(), MatMut::row_major(dx.item_mut(b), cin, vol));
        }
        return Ok(dx);
    }
    let mut cols = Vec::new();
    for b in 0..dg.batch {
        for (z0, z1) in low.blocks() {
            let m = (z1 - z0) * plane;
            cols.resize(k_rows * m, T::zero());
            let g = MatRef::strided(&grad_out.item(b)[z0 * plane..], cout, m, vol, 1);
            gemm(T::one(), wt, g, T::zero(), MatMut::row_major(&mut cols, k_rows, m));
            low.col2im(&cols, z0, z1, dx.item_mut(b));
        }
    }
    Ok(dx)
}

/// Gradient of `<conv3d(input, W), grad_out>` with respect to `W`.
pub fn conv3d_weight_grad<T: Scalar>(
    input: &Tensor5<T>,
    grad_out: &Tensor5<T>,
    spec: ConvSpec,
) -> Result<Tensor5<T>> {
    let di = input.dims();
    let dg = grad_out.dims();
    if di.batch != dg.batch || spec.output_spatial(di.spatial())? != dg.spatial() {
        return Err(Error::shape(format!("input {di} inconsistent with gradient {dg}")));
    }
    let k = spec.kernel;
    let cout = dg.channels;
    let mut dw = Tensor5::zeros(Dims5::new(cout, di.channels, k, k, k));
    let low = Lowering { cin: di.channels, input: di.spatial(), output: dg.spatial(), spec };
    let k_rows = low.rows();
    let plane = low.plane();
    let vol = dg.spatial_len();

    for b in 0..di.batch {
        if spec.is_pointwise() {
            let g = MatRef::row_major(grad_out.item(b), cout, vol);
            let x = MatRef::row_major(input.item(b), di.channels, vol).t();
            gemm(T::one(), g, x, T::one(), MatMut::row_major(dw.data_mut(), cout, k_rows));
            continue;
        }
        let mut cols = Vec::new();
        for (z0, z1) in low.blocks() {
            let m = (z1 - z0) * plane;
            cols.resize(k_rows * m, T::zero());
            low.im2col(input.item(b), z0, z1, &mut cols);
            let g = MatRef::strided(&grad_out.item(b)[z0 * plane..], cout, m, vol, 1);
            gemm(
                T::one(),
                g,
                MatRef::row_major(&cols, k_rows, m).t(),
                T::one(),
                MatMut::row_major(dw.data_mut(), cout, k_rows),
            );
        }
    }
    Ok(dw)
}

/// Per-channel sum of a gradient: the bias gradient.
pub fn channel_sums<T: Scalar>(g: &Tensor5<T>) -> Vec<T> {
    let d = g.dims();
    (0..d.channels)
        .map(|c| (0..d.batch).map(|b| g.channel(b, c).iter().copied().sum::<T>()).sum())
        .collect()
}

/// Transposed convolution of `input` (N, Cin, ...) with `weight`
/// (Cin, Cout, k, k, k): the exact adjoint of `conv3d` with the same weight.
/// With [`ConvSpec::UP2`] every spatial extent doubles.
pub fn transposed_conv3d<T: Scalar>(
    input: &Tensor5<T>,
    weight: &Tensor5<T>,
    spec: ConvSpec,
) -> Result<Tensor5<T>> {
    let out_sp = spec.transposed_spatial(input.dims().spatial())?;
    conv3d_input_grad(input, weight, spec, out_sp)
}

/// Convolution layer. Weight dims are (Cout, Cin, k, k, k); bias, when
/// present, is stored as (1, Cout, 1, 1, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3dLayer<T: Scalar> {
    pub weight: Tensor5<T>,
    pub bias: Option<Tensor5<T>>,
    pub spec: ConvSpec,
}

impl<T: Scalar> Conv3dLayer<T> {
    pub fn zeros(cin: usize, cout: usize, spec: ConvSpec, with_bias: bool) -> Self {
        let k = spec.kernel;
        Conv3dLayer {
            weight: Tensor5::zeros(Dims5::new(cout, cin, k, k, k)),
            bias: with_bias.then(|| Tensor5::zeros(Dims5::new(1, cout, 1, 1, 1))),
            spec,
        }
    }

    /// He-style normal init with standard deviation `gain / sqrt(fan_in)`.
    pub fn init_normal(&mut self, rng: &mut Rng, gain: f64) {
        let d = self.weight.dims();
        let fan_in = (d.channels * self.spec.taps()) as f64;
        let std = gain / fan_in.sqrt();
        for v in self.weight.data_mut() {
            *v = T::c(rng.normal() * std);
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims().channels
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims().batch
    }

    pub fn forward(&self, x: &Tensor5<T>) -> Result<Tensor5<T>> {
        conv3d(x, &self.weight, self.bias.as_ref().map(|b| b.data()), self.spec)
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient when requested.
    pub fn backward(
        &self,
        x: &Tensor5<T>,
        grad_out: &Tensor5<T>,
        grad: &mut Self,
        need_input_grad: bool,
    ) -> Result<Option<Tensor5<T>>> {
        grad.weight.add_assign(&conv3d_weight_grad(x, grad_out, self.spec)?);
        if let Some(gb) = grad.bias.as_mut() {
            for (g, s) in gb.data_mut().iter_mut().zip(channel_sums(grad_out)) {
                *g = *g + s;
            }
        }
        if need_input_grad {
            Ok(Some(conv3d_input_grad(grad_out, &self.weight, self.spec, x.dims().spatial())?))
        } else {
            Ok(None)
        }
    }
}

impl<T: Scalar> Params<T> for Conv3dLayer<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor5<T>)) {
        f(&format!("{prefix}.weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&format!("{prefix}.bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor5<T>)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&format!("{prefix}.bias"), b);
        }
    }
}

/// Transposed convolution layer without bias. Weight dims are
/// (Cin, Cout, k, k, k).
#[derive(Clone, Debug, PartialEq)]
pub struct TransposedConv3dLayer<T: Scalar> {
    pub weight: Tensor5<T>,
    pub spec: ConvSpec,
}

impl<T: Scalar> TransposedConv3dLayer<T> {
    pub fn zeros(cin: usize, cout: usize, spec: ConvSpec) -> Self {
        let k = spec.kernel;
        TransposedConv3dLayer { weight: Tensor5::zeros(Dims5::new(cin, cout, k, k, k)), spec }
    }

    pub fn init_normal(&mut self, rng: &mut Rng, gain: f64) {
        // Each output voxel of a stride-k transposed conv sees Cin taps.
        let fan_in = self.weight.dims().batch as f64;
        let std = gain / fan_in.sqrt();
        for v in self.weight.data_mut() {
            *v = T::c(rng.normal() * std);
        }
    }

    pub fn forward(&self, x: &Tensor5<T>) -> Result<Tensor5<T>> {
        transposed_conv3d(x, &self.weight, self.spec)
    }

    pub fn backward(&self, x: &Tensor5<T>, grad_out: &Tensor5<T>, grad: &mut Self) -> Result<Tensor5<T>> {
        // y = C^T x, so dL/dW = weight_grad(input = dy, upstream = x).
        grad.weight.add_assign(&conv3d_weight_grad(grad_out, x, self.spec)?);
        conv3d(grad_out, &self.weight, None, self.spec)
    }
}

impl<T: Scalar> Params<T> for TransposedConv3dLayer<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor5<T>)) {
        f(&format!("{prefix}.weight"), &self.weight);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor5<T>)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
    }
}
