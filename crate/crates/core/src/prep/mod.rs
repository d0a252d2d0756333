//! Preprocessing: resampling to a common spacing, foreground intensity
//! statistics, clip + z-score normalization, and augmentation.

pub mod augment;
pub mod normalize;
pub mod resample;

pub use augment::{apply_gamma, apply_spatial, augment, sample_spatial, AugmentConfig, ElasticConfig, SpatialParams};
pub use normalize::{clip_normalize, foreground_stats, foreground_stats_with, median_spacing, ClipPercentiles, PrepStats};
pub use resample::{output_dims, resample_image, resample_image_to, resample_mask, resample_mask_onto, resample_mask_to};

use crate::{LabelMap, Result, Volume};

/// Resamples a case to the stats' target spacing and normalizes it.
pub fn preprocess_case(v: &Volume, m: Option<&LabelMap>, stats: &PrepStats) -> Result<(Volume, Option<LabelMap>)> {
    let target = stats.target_spacing_f32();
    let img = clip_normalize(&resample_image(v, target)?, stats);
    let lab = m.map(|m| resample_mask(m, target)).transpose()?;
    Ok((img, lab))
}
