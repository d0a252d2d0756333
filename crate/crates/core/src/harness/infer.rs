//! Inference: preprocessing with stored statistics, sliding-window
//! prediction with Gaussian blending, argmax, cleanup, and resampling back
//! to the native grid.

use serde::{Deserialize, Serialize};

use super::train::crop;
use crate::net::Network;
use crate::postproc::{argmax_labels, cleanup, PostprocConfig};
use crate::prep::{clip_normalize, resample_image, resample_mask_onto, PrepStats};
use crate::voxcore::{softmax_channels, Geometry};
use crate::{Dims5, Error, LabelMap, Result, Tensor5, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferMode {
    #[default]
    SlidingWindow,
    /// One forward pass over the (padded) whole volume.
    WholeVolume,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub mode: InferMode,
    pub patch: [usize; 3],
    /// Fractional overlap between neighbouring windows.
    pub overlap: f64,
    /// Gaussian sigma as a fraction of the patch edge.
    pub sigma_scale: f64,
    pub postproc: PostprocConfig,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            mode: InferMode::default(),
            patch: [64; 3],
            overlap: 0.5,
            sigma_scale: 1.0 / 8.0,
            postproc: PostprocConfig::default(),
        }
    }
}

/// Window start offsets covering `n` with windows of `p` and the given
/// overlap; evenly spread, first at 0 and last flush with the end.
pub fn window_starts(n: usize, p: usize, overlap: f64) -> Vec<usize> {
    if n <= p {
        return vec![0];
    }
    let stride = ((p as f64) * (1.0 - overlap)).max(1.0);
    let steps = ((n - p) as f64 / stride).ceil() as usize + 1;
    let span = (n - p) as f64;
    (0..steps).map(|i| (span * i as f64 / (steps - 1) as f64).round() as usize).collect()
}

/// Separable Gaussian importance map, peak 1, floored at a small positive
/// value so border voxels still count.
pub fn gaussian_weights(patch: [usize; 3], sigma_scale: f64) -> Vec<f32> {
    let axis = |n: usize| -> Vec<f64> {
        let c = (n as f64 - 1.0) / 2.0;
        let s = (n as f64 * sigma_scale).max(1e-6);
        (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * s * s)).exp()).collect()
    };
    let (wz, wy, wx) = (axis(patch[0]), axis(patch[1]), axis(patch[2]));
    let mut out = Vec::with_capacity(patch.iter().product());
    for z in &wz {
        for y in &wy {
            for x in &wx {
                out.push((z * y * x).max(1e-4) as f32);
            }
        }
    }
    out
}

fn round_up(n: usize, f: usize) -> usize {
    n.div_ceil(f) * f
}

/// Blended class probabilities (1, K, D, H, W) for a preprocessed image.
pub fn predict_probs(net: &Network<f32>, image: &Volume, cfg: &InferConfig) -> Result<Tensor5<f32>> {
    let f = net.config().divisor();
    let dims = image.dims();
    let k = net.config().num_classes;
    let pad = image.min_max().0;
    let labels = LabelMap::zeros(*image.geometry());
    let patch: [usize; 3] = match cfg.mode {
        InferMode::WholeVolume => dims.map(|d| round_up(d, f)),
        InferMode::SlidingWindow => {
            if let Some(a) = (0..3).find(|&a| cfg.patch[a] == 0 || cfg.patch[a] % f != 0) {
                return Err(Error::Indivisible { axis: crate::voxcore::Axis::ALL[a].name(), len: cfg.patch[a], factor: f });
            }
            cfg.patch
        }
    };
    if !(0.0..1.0).contains(&cfg.overlap) {
        return Err(Error::Config(format!("overlap {} outside [0, 1)", cfg.overlap)));
    }
    let starts: [Vec<usize>; 3] = std::array::from_fn(|a| window_starts(dims[a], patch[a], cfg.overlap));
    // volumes smaller than the patch sit centred in a single padded window
    let offset: [isize; 3] = std::array::from_fn(|a| {
        if dims[a] < patch[a] {
            -(((patch[a] - dims[a]) / 2) as isize)
        } else {
            0
        }
    });
    let mut windows = Vec::new();
    for &z in &starts[0] {
        for &y in &starts[1] {
            for &x in &starts[2] {
                let s = [z, y, x];
                windows.push(std::array::from_fn::<isize, 3, _>(|a| s[a] as isize + offset[a]));
            }
        }
    }

    let forward = |start: [isize; 3]| -> Result<Tensor5<f32>> {
        let (v, _) = crop(image, &labels, start, patch, pad)?;
        softmax_channels(&net.forward(&v.to_tensor())?)
    };
    let n = dims.iter().product::<usize>();
    let out_dims = Dims5::new(1, k, dims[0], dims[1], dims[2]);
    let pg = Geometry::new(patch, [1.0; 3], [0.0; 3])?;
    let g = image.geometry();

    if windows.len() == 1 {
        // no blending needed: copy the window's probabilities
        let p = forward(windows[0])?;
        return Ok(Tensor5::from_fn(out_dims, |[_, c, z, y, x]| {
            let pz = (z as isize - windows[0][0]) as usize;
            let py = (y as isize - windows[0][1]) as usize;
            let px = (x as isize - windows[0][2]) as usize;
            p.channel(0, c)[pg.index(pz, py, px)]
        }));
    }

    let weights = gaussian_weights(patch, cfg.sigma_scale);
    let mut acc = vec![0f64; k * n];
    let mut wsum = vec![0f64; n];
    for &start in &windows {
        let p = forward(start)?;
        for pz in 0..patch[0] {
            let z = start[0] + pz as isize;
            if z < 0 || z >= dims[0] as isize {
                continue;
            }
            for py in 0..patch[1] {
                let y = start[1] + py as isize;
                if y < 0 || y >= dims[1] as isize {
                    continue;
                }
                for px in 0..patch[2] {
                    let x = start[2] + px as isize;
                    if x < 0 || x >= dims[2] as isize {
                        continue;
                    }
                    let pi = pg.index(pz, py, px);
                    let vi = g.index(z as usize, y as usize, x as usize);
                    let w = weights[pi] as f64;
                    wsum[vi] += w;
                    for c in 0..k {
                        acc[c * n + vi] += w * p.channel(0, c)[pi] as f64;
                    }
                }
            }
        }
    }
    let data = acc.iter().enumerate().map(|(i, &a)| (a / wsum[i % n]) as f32).collect();
    Tensor5::from_vec(out_dims, data)
}

/// Labels on the preprocessed grid.
pub fn segment_preprocessed(net: &Network<f32>, image: &Volume, cfg: &InferConfig) -> Result<LabelMap> {
    let probs = predict_probs(net, image, cfg)?;
    Ok(cleanup(&argmax_labels(&probs, image.geometry())?, &cfg.postproc))
}

/// Full inference on a native-geometry volume.
pub fn infer(volume: &Volume, net: &Network<f32>, stats: &PrepStats, cfg: &InferConfig) -> Result<LabelMap> {
    stats.validate()?;
    if net.config().in_channels != 1 {
        return Err(Error::Config(format!("network expects {} input channels, volumes have 1", net.config().in_channels)));
    }
    let image = clip_normalize(&resample_image(volume, stats.target_spacing_f32())?, stats);
    let labels = segment_preprocessed(net, &image, cfg)?;
    resample_mask_onto(&labels, volume.geometry())
}
