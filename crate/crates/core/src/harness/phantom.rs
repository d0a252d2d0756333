//! Synthetic CT-like cases with known ground truth.
//!
//! Shapes are placed in normalized grid coordinates, so a phantom looks the
//! same at any spacing: an ellipsoidal kidney holding a spherical tumor, and
//! two curved tubes (artery, vein) running along the depth axis beside it.

use serde::{Deserialize, Serialize};

use crate::voxcore::Geometry;
use crate::{class, Error, LabelMap, Result, Rng, Volume};

/// Smallest supported edge length.
pub const MIN_EDGE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    /// Mean HU per class, indexed by class id.
    pub intensity: [f32; 5],
    pub noise_sd: f32,
    /// HU added across the depth axis (smooth background trend).
    pub gradient: f32,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig { intensity: [-80.0, 160.0, 90.0, 320.0, 240.0], noise_sd: 20.0, gradient: 40.0 }
    }
}

fn ellipsoid(u: [f64; 3], c: [f64; 3], r: [f64; 3]) -> f64 {
    (0..3).map(|a| ((u[a] - c[a]) / r[a]).powi(2)).sum()
}

fn tube_distance(u: [f64; 3], centre: [f64; 2], amp: f64, phase: f64) -> f64 {
    // centre line (y, x) swings sinusoidally along depth
    let t = u[0];
    let y = centre[0] + amp * (std::f64::consts::TAU * t + phase).sin();
    let x = centre[1] + 0.5 * amp * (std::f64::consts::PI * t + phase).cos();
    ((u[1] - y).powi(2) + (u[2] - x).powi(2)).sqrt()
}

pub fn gen_phantom(rng: &mut Rng, dims: [usize; 3], spacing: [f32; 3]) -> Result<(Volume, LabelMap)> {
    gen_phantom_with(rng, dims, spacing, &PhantomConfig::default())
}

pub fn gen_phantom_with(rng: &mut Rng, dims: [usize; 3], spacing: [f32; 3], cfg: &PhantomConfig) -> Result<(Volume, LabelMap)> {
    if dims.iter().any(|&d| d < MIN_EDGE) {
        return Err(Error::invalid(format!("phantom dims {dims:?} below the minimum edge {MIN_EDGE}")));
    }
    let g = Geometry::new(dims, spacing, [0.0; 3])?;
    let mut jitter = |scale: f64| (rng.uniform() - 0.5) * 2.0 * scale;
    let kc = [0.5 + jitter(0.05), 0.45 + jitter(0.05), 0.36 + jitter(0.04)];
    let kr = [0.30 * (1.0 + jitter(0.1)), 0.22 * (1.0 + jitter(0.1)), 0.17 * (1.0 + jitter(0.1))];
    // tumor: sphere (in grid-normalized units per axis, scaled by the
    // smallest radius) fully contained in the kidney
    let rmin = kr.iter().cloned().fold(f64::INFINITY, f64::min);
    let dir = {
        let v = [jitter(1.0), jitter(1.0), jitter(1.0)];
        let n = (v.iter().map(|x| x * x).sum::<f64>()).sqrt().max(1e-9);
        v.map(|x| x / n)
    };
    let tc: [f64; 3] = std::array::from_fn(|a| kc[a] + 0.3 * rmin * dir[a]);
    let tr = 0.5 * rmin;
    let artery = ([0.40 + jitter(0.03), 0.74 + jitter(0.02)], 0.06, jitter(3.0), 0.055);
    let vein = ([0.62 + jitter(0.03), 0.86 + jitter(0.02)], 0.05, jitter(3.0), 0.065);

    let mut labels = vec![class::BACKGROUND; g.len()];
    for (i, l) in labels.iter_mut().enumerate() {
        let c = g.coords(i);
        let u: [f64; 3] = std::array::from_fn(|a| (c[a] as f64 + 0.5) / dims[a] as f64);
        if tube_distance(u, artery.0, artery.1, artery.2) < artery.3 {
            *l = class::ARTERY;
        } else if tube_distance(u, vein.0, vein.1, vein.2) < vein.3 {
            *l = class::VEIN;
        }
        if ellipsoid(u, kc, kr) < 1.0 {
            *l = if ellipsoid(u, tc, [tr; 3]) < 1.0 { class::TUMOR } else { class::KIDNEY };
        }
    }
    let data = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let z = g.coords(i)[0] as f32 / (dims[0] - 1) as f32;
            cfg.intensity[l as usize] + cfg.gradient * z + cfg.noise_sd * rng.normal() as f32
        })
        .collect();
    Ok((Volume::new(g, data)?, LabelMap::new(g, labels)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_means(v: &Volume, m: &LabelMap) -> Vec<f64> {
        (0..5u8)
            .map(|c| {
                let vals: Vec<f64> =
                    v.data().iter().zip(m.data()).filter(|(_, &l)| l == c).map(|(&x, _)| x as f64).collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            })
            .collect()
    }

    #[test]
    fn all_classes_present_and_tumor_enclosed() {
        let (v, m) = gen_phantom(&mut Rng::new(7), [48; 3], [1.0; 3]).unwrap();
        assert_eq!(m.label_set(), vec![0, 1, 2, 3, 4]);
        let [d, h, w] = m.dims();
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    if m.get(z, y, x) != class::TUMOR {
                        continue;
                    }
                    assert!(z > 0 && y > 0 && x > 0 && z + 1 < d && y + 1 < h && x + 1 < w);
                    for (dz, dy, dx) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
                        for s in [-1isize, 1] {
                            let n = m.get(
                                (z as isize + s * dz) as usize,
                                (y as isize + s * dy) as usize,
                                (x as isize + s * dx) as usize,
                            );
                            assert!(n == class::TUMOR || n == class::KIDNEY);
                        }
                    }
                }
            }
        }
        let (lo, hi) = v.min_max();
        assert!(lo > -300.0 && hi < 500.0);
    }

    #[test]
    fn same_seed_same_case() {
        let a = gen_phantom(&mut Rng::new(3), [32, 40, 36], [1.0, 0.8, 0.8]).unwrap();
        let b = gen_phantom(&mut Rng::new(3), [32, 40, 36], [1.0, 0.8, 0.8]).unwrap();
        assert!(a.0.data().iter().zip(b.0.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn class_means_follow_configured_order() {
        let (v, m) = gen_phantom(&mut Rng::new(11), [40; 3], [1.0; 3]).unwrap();
        let mu = class_means(&v, &m);
        // artery > vein > kidney > tumor > background
        assert!(mu[3] > mu[4] && mu[4] > mu[1] && mu[1] > mu[2] && mu[2] > mu[0], "{mu:?}");
    }

    #[test]
    fn too_small_is_an_error() {
        assert!(gen_phantom(&mut Rng::new(0), [16, 48, 48], [1.0; 3]).is_err());
    }
}
