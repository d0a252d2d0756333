//! Training-time augmentation: one composed spatial warp (scale, rotation,
//! elastic displacement) followed by an intensity gamma.

use serde::{Deserialize, Serialize};

use super::resample::cubic_taps;
use crate::voxcore::Axis;
use crate::{Error, LabelMap, Result, Rng, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticConfig {
    pub enabled: bool,
    /// RMS displacement in mm.
    pub alpha: f64,
    /// Gaussian smoothing of the displacement field, in mm.
    pub sigma: f64,
}

impl Default for ElasticConfig {
    fn default() -> Self {
        ElasticConfig { enabled: true, alpha: 4.0, sigma: 3.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub scale_range: (f64, f64),
    /// Degrees; the angle is uniform in `[-max, max]` about a random axis.
    pub rotation_max: f64,
    pub elastic: ElasticConfig,
    pub gamma_range: (f64, f64),
    pub p_scale: f64,
    pub p_rotation: f64,
    pub p_elastic: f64,
    pub p_gamma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale_range: (0.85, 1.25),
            rotation_max: 30.0,
            elastic: ElasticConfig::default(),
            gamma_range: (0.7, 1.5),
            p_scale: 0.2,
            p_rotation: 0.2,
            p_elastic: 0.2,
            p_gamma: 0.2,
        }
    }
}

impl AugmentConfig {
    /// Every probability zero.
    pub fn disabled() -> Self {
        AugmentConfig { p_scale: 0.0, p_rotation: 0.0, p_elastic: 0.0, p_gamma: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("scale_range", self.scale_range), ("gamma_range", self.gamma_range)] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::Config(format!("{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
            }
        }
        for p in [self.p_scale, self.p_rotation, self.p_elastic, self.p_gamma] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        if self.elastic.enabled && !(self.elastic.sigma > 0.0 && self.elastic.alpha >= 0.0) {
            return Err(Error::Config("elastic sigma must be positive and alpha non-negative".into()));
        }
        Ok(())
    }
}

/// A concrete spatial warp. Output voxel at physical offset `q` (mm, from
/// the grid centre) reads the input at `R^T q / scale + e(q)`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SpatialParams {
    pub scale: Option<f64>,
    /// Rotation axis and angle in radians.
    pub rotation: Option<(Axis, f64)>,
    /// Displacement in mm per axis, one value per voxel.
    pub elastic: Option<[Vec<f64>; 3]>,
}

impl SpatialParams {
    pub fn is_identity(&self) -> bool {
        self.scale.is_none() && self.rotation.is_none() && self.elastic.is_none()
    }
}

fn rotation_matrix(axis: Axis, angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    // plane spanned by the two other axes, in storage order
    let (i, j) = match axis {
        Axis::Depth => (1, 2),
        Axis::Height => (0, 2),
        Axis::Width => (0, 1),
    };
    let mut r = [[0.0; 3]; 3];
    r[axis.index()][axis.index()] = 1.0;
    r[i][i] = c;
    r[i][j] = -s;
    r[j][i] = s;
    r[j][j] = c;
    r
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-6 {
        r
    } else {
        x
    }
}

/// Applies a warp to an image/label pair. Image samples are cubic with
/// constant `pad` outside the grid; labels are nearest with background
/// outside.
pub fn apply_spatial(v: &Volume, m: &LabelMap, p: &SpatialParams, pad: f32) -> Result<(Volume, LabelMap)> {
    if v.dims() != m.dims() {
        return Err(Error::shape(format!("volume dims {:?} vs mask dims {:?}", v.dims(), m.dims())));
    }
    if p.is_identity() {
        return Ok((v.clone(), m.clone()));
    }
    let dims = v.dims();
    let sp = v.spacing().map(|s| s as f64);
    let centre = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let rot = p.rotation.map(|(a, t)| rotation_matrix(a, t));
    let inv_scale = 1.0 / p.scale.unwrap_or(1.0);
    let src_img = v.data();
    let mut img = vec![0f32; v.data().len()];
    let mut lab = vec![0u8; v.data().len()];
    let g = *v.geometry();
    for (i, (io, lo)) in img.iter_mut().zip(lab.iter_mut()).enumerate() {
        let c = g.coords(i);
        let q: [f64; 3] = std::array::from_fn(|a| (c[a] as f64 - centre[a]) * sp[a]);
        let mut s = match &rot {
            // R^T q
            Some(r) => std::array::from_fn(|a| (0..3).map(|b| r[b][a] * q[b]).sum::<f64>()),
            None => q,
        };
        for (a, sa) in s.iter_mut().enumerate() {
            *sa *= inv_scale;
            if let Some(e) = &p.elastic {
                *sa += e[a][i];
            }
        }
        let x: [f64; 3] = std::array::from_fn(|a| snap(s[a] / sp[a] + centre[a]));
        let inside = (0..3).all(|a| x[a] >= -0.5 && x[a] <= dims[a] as f64 - 0.5);
        if !inside {
            *io = pad;
            *lo = 0;
            continue;
        }
        let n: [usize; 3] = std::array::from_fn(|a| ((x[a] + 0.5).floor() as usize).min(dims[a] - 1));
        *lo = m.get(n[0], n[1], n[2]);
        if x.iter().all(|v| v.fract() == 0.0) {
            *io = v.get(n[0], n[1], n[2]);
            continue;
        }
        let tz = cubic_taps(x[0], dims[0]);
        let ty = cubic_taps(x[1], dims[1]);
        let tx = cubic_taps(x[2], dims[2]);
        let mut acc = 0.0;
        for a in 0..4 {
            if tz.1[a] == 0.0 {
                continue;
            }
            let mut plane = 0.0;
            for b in 0..4 {
                if ty.1[b] == 0.0 {
                    continue;
                }
                let row = g.index(tz.0[a], ty.0[b], 0);
                let mut line = 0.0;
                for k in 0..4 {
                    line += tx.1[k] * src_img[row + tx.0[k]] as f64;
                }
                plane += ty.1[b] * line;
            }
            acc += tz.1[a] * plane;
        }
        *io = acc as f32;
    }
    Ok((Volume::new(g, img)?, LabelMap::new(g, lab)?))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian smoothing with edge clamping; `sigma` in voxels per
/// axis.
pub(crate) fn gaussian_smooth(data: &[f64], dims: [usize; 3], sigma: [f64; 3]) -> Vec<f64> {
    let mut cur = data.to_vec();
    for a in 0..3 {
        let k = gaussian_kernel(sigma[a]);
        let r = (k.len() / 2) as isize;
        let stride: usize = dims[a + 1..].iter().product();
        let n = dims[a];
        let outer: usize = dims[..a].iter().product();
        let mut out = vec![0.0; cur.len()];
        for o in 0..outer {
            let base = o * n * stride;
            for j in 0..n {
                for (t, w) in k.iter().enumerate() {
                    let src = (j as isize + t as isize - r).clamp(0, n as isize - 1) as usize;
                    let s = &cur[base + src * stride..base + (src + 1) * stride];
                    let d = &mut out[base + j * stride..base + (j + 1) * stride];
                    for (dv, sv) in d.iter_mut().zip(s) {
                        *dv += w * sv;
                    }
                }
            }
        }
        cur = out;
    }
    cur
}

fn elastic_field(dims: [usize; 3], spacing: [f32; 3], cfg: &ElasticConfig, rng: &mut Rng) -> [Vec<f64>; 3] {
    let n: usize = dims.iter().product();
    let sigma = spacing.map(|s| cfg.sigma / s as f64);
    std::array::from_fn(|_| {
        let noise = rng.normals(n);
        let mut f = gaussian_smooth(&noise, dims, sigma);
        let rms = (f.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let k = if rms > 0.0 { cfg.alpha / rms } else { 0.0 };
        f.iter_mut().for_each(|v| *v *= k);
        f
    })
}

/// Draws a warp; each component is included with its probability.
pub fn sample_spatial(dims: [usize; 3], spacing: [f32; 3], cfg: &AugmentConfig, rng: &mut Rng) -> SpatialParams {
    let mut p = SpatialParams::default();
    if rng.bernoulli(cfg.p_scale) {
        p.scale = Some(rng.uniform_range(cfg.scale_range.0, cfg.scale_range.1));
    }
    if rng.bernoulli(cfg.p_rotation) {
        let axis = Axis::ALL[rng.below(3)];
        let max = cfg.rotation_max.to_radians();
        p.rotation = Some((axis, rng.uniform_range(-max, max)));
    }
    if cfg.elastic.enabled && rng.bernoulli(cfg.p_elastic) {
        p.elastic = Some(elastic_field(dims, spacing, &cfg.elastic, rng));
    }
    p
}

/// `((x - min) / (max - min))^gamma` mapped back onto `[min, max]`.
pub fn apply_gamma(v: &Volume, gamma: f64) -> Volume {
    let mut out = v.clone();
    let (lo, hi) = v.min_max();
    let range = hi as f64 - lo as f64;
    if gamma == 1.0 || !(range > 0.0) {
        return out;
    }
    for x in out.data_mut() {
        let r = (*x as f64 - lo as f64) / range;
        *x = (r.powf(gamma) * range + lo as f64) as f32;
    }
    out
}

/// Randomized augmentation of an image/label pair. Deterministic for a
/// given `rng` state.
pub fn augment(v: &Volume, m: &LabelMap, cfg: &AugmentConfig, rng: &mut Rng) -> Result<(Volume, LabelMap)> {
    let spatial = sample_spatial(v.dims(), v.spacing(), cfg, rng);
    let pad = v.min_max().0;
    let (mut img, lab) = apply_spatial(v, m, &spatial, pad)?;
    if rng.bernoulli(cfg.p_gamma) {
        img = apply_gamma(&img, rng.uniform_range(cfg.gamma_range.0, cfg.gamma_range.1));
    }
    Ok((img, lab))
}
