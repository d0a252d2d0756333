//! Grid resampling: separable Catmull-Rom cubic for intensities, nearest
//! neighbour for labels.
//!
//! Sample centres are aligned so that the physical extent of the grid is
//! kept: output index `j` reads input coordinate `(j + 0.5) * r - 0.5` with
//! `r = n_in / n_out` (explicit dims) or `r = target / spacing` (spacing
//! targets). Reads outside the grid clamp to the edge voxel.

use crate::voxcore::Geometry;
use crate::{Error, LabelMap, Result, Volume};

/// `round(dims * spacing / target)` per axis, at least 1.
pub fn output_dims(dims: [usize; 3], spacing: [f32; 3], target: [f32; 3]) -> Result<[usize; 3]> {
    check_target(target)?;
    Ok(std::array::from_fn(|a| {
        ((dims[a] as f64 * spacing[a] as f64 / target[a] as f64).round() as usize).max(1)
    }))
}

fn check_target(target: [f32; 3]) -> Result<()> {
    if target.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(Error::invalid(format!("target spacing must be positive, got {target:?}")));
    }
    Ok(())
}

/// Catmull-Rom weights for taps at offsets -1, 0, 1, 2 from `floor(x)`.
#[inline]
pub(crate) fn cubic_weights(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    [
        0.5 * (-u3 + 2.0 * u2 - u),
        0.5 * (3.0 * u3 - 5.0 * u2 + 2.0),
        0.5 * (-3.0 * u3 + 4.0 * u2 + u),
        0.5 * (u3 - u2),
    ]
}

/// Taps (clamped indices and weights) for one output sample at input
/// coordinate `x` on an axis of length `n`.
#[inline]
pub(crate) fn cubic_taps(x: f64, n: usize) -> ([usize; 4], [f64; 4]) {
    let f = x.floor();
    let w = cubic_weights(x - f);
    let last = n as isize - 1;
    let i0 = f as isize;
    let idx = std::array::from_fn(|k| (i0 - 1 + k as isize).clamp(0, last) as usize);
    (idx, w)
}

#[inline]
fn source_coord(j: usize, ratio: f64) -> f64 {
    (j as f64 + 0.5) * ratio - 0.5
}

#[inline]
fn nearest(x: f64, n: usize) -> usize {
    ((x + 0.5).floor().max(0.0) as usize).min(n - 1)
}

/// Resamples one axis of a row-major (D, H, W) array of f64.
fn cubic_axis(src: &[f64], dims: [usize; 3], axis: usize, n_out: usize, ratio: f64) -> Vec<f64> {
    let n_in = dims[axis];
    let stride_in: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut out = vec![0.0; outer * n_out * stride_in];
    let taps: Vec<_> = (0..n_out).map(|j| cubic_taps(source_coord(j, ratio), n_in)).collect();
    for o in 0..outer {
        let src_block = &src[o * n_in * stride_in..(o + 1) * n_in * stride_in];
        let dst_block = &mut out[o * n_out * stride_in..(o + 1) * n_out * stride_in];
        for (j, (idx, w)) in taps.iter().enumerate() {
            let dst = &mut dst_block[j * stride_in..(j + 1) * stride_in];
            for k in 0..4 {
                if w[k] == 0.0 {
                    continue;
                }
                let row = &src_block[idx[k] * stride_in..(idx[k] + 1) * stride_in];
                for (d, s) in dst.iter_mut().zip(row) {
                    *d += w[k] * s;
                }
            }
        }
    }
    out
}

fn resampled_geometry(g: &Geometry, dims: [usize; 3], ratios: [f64; 3]) -> Result<Geometry> {
    let spacing = std::array::from_fn(|a| (g.spacing[a] as f64 * ratios[a]) as f32);
    let origin = std::array::from_fn(|a| {
        (g.origin[a] as f64 + source_coord(0, ratios[a]) * g.spacing[a] as f64) as f32
    });
    Geometry::new(dims, spacing, origin)
}

fn cubic_resample(v: &Volume, dims: [usize; 3], ratios: [f64; 3], spacing: [f32; 3]) -> Result<Volume> {
    let mut geometry = resampled_geometry(v.geometry(), dims, ratios)?;
    geometry.spacing = spacing;
    let mut cur: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    let mut cur_dims = v.dims();
    for a in 0..3 {
        if cur_dims[a] == dims[a] && ratios[a] == 1.0 {
            continue;
        }
        cur = cubic_axis(&cur, cur_dims, a, dims[a], ratios[a]);
        cur_dims[a] = dims[a];
    }
    Volume::new(geometry, cur.into_iter().map(|x| x as f32).collect())
}

fn nearest_resample(m: &LabelMap, dims: [usize; 3], ratios: [f64; 3], spacing: [f32; 3]) -> Result<LabelMap> {
    let mut geometry = resampled_geometry(m.geometry(), dims, ratios)?;
    geometry.spacing = spacing;
    let n_in = m.dims();
    let maps: [Vec<usize>; 3] =
        std::array::from_fn(|a| (0..dims[a]).map(|j| nearest(source_coord(j, ratios[a]), n_in[a])).collect());
    let mut data = Vec::with_capacity(geometry.len());
    for &z in &maps[0] {
        for &y in &maps[1] {
            for &x in &maps[2] {
                data.push(m.get(z, y, x));
            }
        }
    }
    LabelMap::new(geometry, data)
}

/// Cubic resampling of intensities onto `target` spacing.
pub fn resample_image(v: &Volume, target: [f32; 3]) -> Result<Volume> {
    let dims = output_dims(v.dims(), v.spacing(), target)?;
    let ratios = std::array::from_fn(|a| target[a] as f64 / v.spacing()[a] as f64);
    cubic_resample(v, dims, ratios, target)
}

/// Nearest-neighbour resampling of labels onto `target` spacing.
pub fn resample_mask(m: &LabelMap, target: [f32; 3]) -> Result<LabelMap> {
    let dims = output_dims(m.dims(), m.spacing(), target)?;
    let ratios = std::array::from_fn(|a| target[a] as f64 / m.spacing()[a] as f64);
    nearest_resample(m, dims, ratios, target)
}

fn dims_ratios(from: [usize; 3], to: [usize; 3]) -> Result<[f64; 3]> {
    if to.contains(&0) {
        return Err(Error::invalid(format!("output dims must be positive, got {to:?}")));
    }
    Ok(std::array::from_fn(|a| from[a] as f64 / to[a] as f64))
}

/// Cubic resampling onto an explicit grid covering the same extent.
pub fn resample_image_to(v: &Volume, dims: [usize; 3]) -> Result<Volume> {
    let ratios = dims_ratios(v.dims(), dims)?;
    let spacing = std::array::from_fn(|a| (v.spacing()[a] as f64 * ratios[a]) as f32);
    cubic_resample(v, dims, ratios, spacing)
}

/// Nearest-neighbour resampling onto an explicit grid covering the same
/// extent.
pub fn resample_mask_to(m: &LabelMap, dims: [usize; 3]) -> Result<LabelMap> {
    let ratios = dims_ratios(m.dims(), dims)?;
    let spacing = std::array::from_fn(|a| (m.spacing()[a] as f64 * ratios[a]) as f32);
    nearest_resample(m, dims, ratios, spacing)
}

/// Labels mapped onto a given geometry (dims and spacing taken from
/// `geometry`, sampling by extent).
pub fn resample_mask_onto(m: &LabelMap, geometry: &Geometry) -> Result<LabelMap> {
    let out = resample_mask_to(m, geometry.dims)?;
    LabelMap::new(*geometry, out.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxcore::Rng;
    use proptest::prelude::*;

    fn geom(dims: [usize; 3], spacing: [f32; 3]) -> Geometry {
        Geometry::new(dims, spacing, [0.0; 3]).unwrap()
    }

    #[test]
    fn weights_partition_unity_and_interpolate() {
        for u in [0.0, 0.1, 0.25, 0.5, 0.9] {
            let w = cubic_weights(u);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            // linear reproduction: sum w_k * (k - 1) = u
            let lin: f64 = w.iter().enumerate().map(|(k, w)| w * (k as f64 - 1.0)).sum();
            assert!((lin - u).abs() < 1e-15);
        }
        assert_eq!(cubic_weights(0.0), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_stays_constant() {
        let v = Volume::filled(geom([5, 6, 7], [1.0, 2.0, 0.7]), 42.5);
        for target in [[0.5, 0.5, 0.5], [3.0, 1.0, 1.3], [1.0, 2.0, 0.7]] {
            let r = resample_image(&v, target).unwrap();
            assert_eq!(r.spacing(), target);
            assert!(r.data().iter().all(|&x| (x - 42.5).abs() < 1e-6));
        }
    }

    #[test]
    fn identity_target_is_identity() {
        let mut rng = Rng::new(1);
        let v = Volume::from_fn(geom([4, 5, 6], [1.5, 0.8, 0.8]), |_| rng.normal() as f32);
        let r = resample_image(&v, [1.5, 0.8, 0.8]).unwrap();
        assert_eq!(r.dims(), v.dims());
        assert!(r.data().iter().zip(v.data()).all(|(a, b)| (a - b).abs() < 1e-5));
    }

    #[test]
    fn ramp_is_reproduced_in_the_interior() {
        let v = Volume::from_fn(geom([8, 2, 2], [2.0, 1.0, 1.0]), |[z, _, _]| z as f32);
        let r = resample_image(&v, [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.dims(), [16, 2, 2]);
        // output j reads input (j + 0.5) / 2 - 0.5; interior taps stay in range
        for j in 3..13 {
            let expected = (j as f32 + 0.5) * 0.5 - 0.5;
            assert!((r.get(j, 1, 0) - expected).abs() < 1e-4, "{j}");
        }
    }

    #[test]
    fn two_voxel_mask_upsamples_by_nearest_centre() {
        let m = LabelMap::new(geom([2, 1, 1], [2.0, 1.0, 1.0]), vec![1, 2]).unwrap();
        let r = resample_mask(&m, [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.data(), &[1, 1, 2, 2]);
    }

    #[test]
    fn mask_identity_and_uniform() {
        let mut rng = Rng::new(2);
        let m = LabelMap::new(geom([3, 4, 5], [1.0; 3]), (0..60).map(|_| rng.below(5) as u8).collect()).unwrap();
        assert_eq!(resample_mask(&m, [1.0; 3]).unwrap().data(), m.data());
        let u = LabelMap::new(geom([3, 4, 5], [1.0; 3]), vec![3; 60]).unwrap();
        for t in [[0.3, 0.7, 2.0], [5.0, 5.0, 5.0]] {
            assert!(resample_mask(&u, t).unwrap().data().iter().all(|&l| l == 3));
        }
    }

    #[test]
    fn non_positive_target_is_rejected() {
        let v = Volume::filled(geom([2, 2, 2], [1.0; 3]), 0.0);
        assert!(resample_image(&v, [1.0, 0.0, 1.0]).is_err());
        assert!(resample_image(&v, [1.0, -2.0, 1.0]).is_err());
    }

    #[test]
    fn explicit_dims_round_trip_geometry() {
        let v = Volume::filled(geom([10, 8, 6], [1.0, 1.5, 2.0]), 1.0);
        let down = resample_image(&v, [2.0, 3.0, 4.0]).unwrap();
        let back = resample_image_to(&down, v.dims()).unwrap();
        assert_eq!(back.dims(), v.dims());
        assert_eq!(back.spacing(), v.spacing());
    }

    proptest! {
        #[test]
        fn extent_preserved_within_one_voxel(
            d in 1usize..20, s in 0.3f32..3.0, t in 0.3f32..3.0
        ) {
            let dims = output_dims([d, 1, 1], [s, 1.0, 1.0], [t, 1.0, 1.0]).unwrap();
            let before = d as f64 * s as f64;
            let after = dims[0] as f64 * t as f64;
            prop_assert!((before - after).abs() <= t as f64 + 1e-9 || dims[0] == 1);
        }

        #[test]
        fn mask_never_invents_labels(seed in 0u64..1000, t in 0.4f32..2.5) {
            let mut rng = Rng::new(seed);
            let m = LabelMap::new(geom([4, 3, 5], [1.0; 3]), (0..60).map(|_| [0u8, 2, 4][rng.below(3)]).collect()).unwrap();
            let r = resample_mask(&m, [t, 1.0, t]).unwrap();
            let input = m.label_set();
            prop_assert!(r.label_set().iter().all(|l| input.contains(l)));
        }
    }
}
