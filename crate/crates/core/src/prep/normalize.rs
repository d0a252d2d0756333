//! Dataset statistics, clipping and z-score normalization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::voxcore::{percentile, percentile_sorted};
use crate::{Error, LabelMap, Result, Volume};

/// Intensity percentiles used for the clip window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipPercentiles {
    pub lo: f64,
    pub hi: f64,
}

impl ClipPercentiles {
    /// 0.05th and 99.5th percentiles.
    pub const LITERAL: ClipPercentiles = ClipPercentiles { lo: 0.05, hi: 99.5 };
    /// 0.5th and 99.5th percentiles.
    pub const CONVENTIONAL: ClipPercentiles = ClipPercentiles { lo: 0.5, hi: 99.5 };
}

impl Default for ClipPercentiles {
    fn default() -> Self {
        Self::LITERAL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepStats {
    /// mm per axis (depth, height, width).
    pub target_spacing: [f64; 3],
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl PrepStats {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.clip_lo, self.clip_hi, self.mu, self.sigma].iter().all(|v| v.is_finite());
        if !finite || self.clip_lo > self.clip_hi || self.sigma < 0.0 {
            return Err(Error::invalid(format!("inconsistent preprocessing stats {self:?}")));
        }
        if self.target_spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid(format!("target spacing must be positive, got {:?}", self.target_spacing)));
        }
        Ok(())
    }

    pub fn target_spacing_f32(&self) -> [f32; 3] {
        self.target_spacing.map(|s| s as f32)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain fields serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: PrepStats = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Per-axis median of voxel spacings.
pub fn median_spacing(spacings: &[[f32; 3]]) -> Result<[f32; 3]> {
    if spacings.is_empty() {
        return Err(Error::invalid("median spacing of an empty set"));
    }
    let mut out = [0f32; 3];
    for (a, o) in out.iter_mut().enumerate() {
        let axis: Vec<f64> = spacings.iter().map(|s| s[a] as f64).collect();
        *o = percentile(&axis, 50.0)? as f32;
    }
    Ok(out)
}

/// Statistics of the intensities under any foreground label, pooled over
/// all cases, with the default (literal) clip percentiles. The target
/// spacing is the median spacing of the volumes.
pub fn foreground_stats(volumes: &[Volume], masks: &[LabelMap]) -> Result<PrepStats> {
    foreground_stats_with(volumes, masks, ClipPercentiles::default())
}

pub fn foreground_stats_with(volumes: &[Volume], masks: &[LabelMap], pct: ClipPercentiles) -> Result<PrepStats> {
    if volumes.len() != masks.len() {
        return Err(Error::invalid(format!("{} volumes but {} masks", volumes.len(), masks.len())));
    }
    let mut pool = Vec::new();
    for (v, m) in volumes.iter().zip(masks) {
        if v.dims() != m.dims() {
            return Err(Error::shape(format!("volume dims {:?} vs mask dims {:?}", v.dims(), m.dims())));
        }
        pool.extend(v.data().iter().zip(m.data()).filter(|(_, &l)| l != 0).map(|(&x, _)| x as f64));
    }
    if pool.is_empty() {
        return Err(Error::EmptyForeground);
    }
    pool.sort_by(f64::total_cmp);
    let clip_lo = percentile_sorted(&pool, pct.lo)?;
    let clip_hi = percentile_sorted(&pool, pct.hi)?;
    let n = pool.len() as f64;
    let clipped = || pool.iter().map(|x| x.clamp(clip_lo, clip_hi));
    let mu = clipped().sum::<f64>() / n;
    let sigma = (clipped().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n).sqrt();
    let spacings: Vec<_> = volumes.iter().map(|v| v.spacing()).collect();
    let target_spacing = median_spacing(&spacings)?.map(|s| s as f64);
    Ok(PrepStats { target_spacing, clip_lo, clip_hi, mu, sigma })
}

/// Clips to `[clip_lo, clip_hi]` then applies `(x - mu) / sigma`. A
/// degenerate `sigma` (< 1e-8) maps everything to zero.
pub fn clip_normalize(v: &Volume, s: &PrepStats) -> Volume {
    let mut out = v.clone();
    if s.sigma < 1e-8 {
        out.data_mut().fill(0.0);
        return out;
    }
    for x in out.data_mut() {
        *x = (((*x as f64).clamp(s.clip_lo, s.clip_hi) - s.mu) / s.sigma) as f32;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxcore::Geometry;

    fn vol(values: Vec<f32>) -> Volume {
        Volume::new(Geometry::isotropic([values.len(), 1, 1], 1.0), values).unwrap()
    }

    fn stats(clip_lo: f64, clip_hi: f64, mu: f64, sigma: f64) -> PrepStats {
        PrepStats { target_spacing: [1.0; 3], clip_lo, clip_hi, mu, sigma }
    }

    #[test]
    fn median_spacing_examples() {
        assert_eq!(median_spacing(&[[1.0, 1.0, 1.0]]).unwrap(), [1.0, 1.0, 1.0]);
        assert_eq!(median_spacing(&[[1.0, 1.0, 1.0], [1.0, 1.0, 2.0], [1.0, 1.0, 3.0]]).unwrap(), [1.0, 1.0, 2.0]);
        assert_eq!(median_spacing(&[[1.0, 1.0, 1.0], [2.0, 2.0, 4.0]]).unwrap(), [1.5, 1.5, 2.5]);
        assert!(median_spacing(&[]).is_err());
    }

    #[test]
    fn percentiles_of_one_to_thousand() {
        let v = vol((1..=1000).map(|i| i as f32).collect());
        let m = LabelMap::new(*v.geometry(), vec![1; 1000]).unwrap();
        let s = foreground_stats(&[v.clone()], &[m.clone()]).unwrap();
        // rank 0.0005 * 999 = 0.4995; rank 0.995 * 999 = 994.005
        assert!((s.clip_lo - 1.4995).abs() < 1e-9);
        assert!((s.clip_hi - 995.005).abs() < 1e-9);
        let c = foreground_stats_with(&[v], &[m], ClipPercentiles::CONVENTIONAL).unwrap();
        assert!((c.clip_lo - 5.995).abs() < 1e-9);
    }

    #[test]
    fn identical_pool_has_zero_sigma() {
        let v = vol(vec![7.0; 10]);
        let m = LabelMap::new(*v.geometry(), vec![2; 10]).unwrap();
        let s = foreground_stats(&[v], &[m]).unwrap();
        assert_eq!((s.clip_lo, s.clip_hi, s.mu, s.sigma), (7.0, 7.0, 7.0, 0.0));
    }

    #[test]
    fn background_only_is_an_error() {
        let v = vol(vec![1.0, 2.0]);
        let m = LabelMap::zeros(*v.geometry());
        assert!(matches!(foreground_stats(&[v], &[m]), Err(Error::EmptyForeground)));
    }

    #[test]
    fn only_foreground_voxels_enter_the_pool() {
        let v = vol(vec![-1000.0, 10.0, 20.0, 30.0]);
        let m = LabelMap::new(*v.geometry(), vec![0, 1, 3, 4]).unwrap();
        let s = foreground_stats_with(&[v], &[m], ClipPercentiles { lo: 0.0, hi: 100.0 }).unwrap();
        assert_eq!(s.mu, 20.0);
        assert!((s.sigma - (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn normalize_examples() {
        let z = clip_normalize(&vol(vec![2.0, 4.0, 6.0]), &stats(-1e9, 1e9, 4.0, (8.0f64 / 3.0).sqrt()));
        let e = [-1.2247449, 0.0, 1.2247449];
        assert!(z.data().iter().zip(e).all(|(a, b)| (a - b).abs() < 1e-4));
        let z = clip_normalize(&vol(vec![3.0; 4]), &stats(0.0, 10.0, 3.0, 2.0));
        assert!(z.data().iter().all(|&x| x == 0.0));
        let z = clip_normalize(&vol(vec![2000.0]), &stats(0.0, 995.0, 500.0, 100.0));
        assert!((z.data()[0] - 4.95).abs() < 1e-6);
        let z = clip_normalize(&vol(vec![5.0, 9.0]), &stats(0.0, 10.0, 1.0, 1e-9));
        assert!(z.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalized_output_has_zero_mean_unit_sd() {
        let v = vol((0..50).map(|i| (i * i) as f32).collect());
        let m = LabelMap::new(*v.geometry(), vec![1; 50]).unwrap();
        let s = foreground_stats_with(&[v.clone()], &[m.clone()], ClipPercentiles { lo: 0.0, hi: 100.0 }).unwrap();
        let z = clip_normalize(&v, &s);
        let again = foreground_stats_with(&[z], &[m], ClipPercentiles { lo: 0.0, hi: 100.0 }).unwrap();
        assert!(again.mu.abs() < 1e-6 && (again.sigma - 1.0).abs() < 1e-6);
    }

    #[test]
    fn toml_round_trip_is_exact() {
        let s = PrepStats { target_spacing: [0.8, 0.71, 2.5], clip_lo: -79.123456789, clip_hi: 301.1, mu: 1.0 / 3.0, sigma: 0.1 + 0.2 };
        assert_eq!(PrepStats::from_toml(&s.to_toml()).unwrap(), s);
        assert!(PrepStats::from_toml("clip_lo = 1.0").is_err());
    }
}
