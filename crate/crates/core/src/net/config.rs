use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Architecture of the segmentation network.
///
/// Encoder stage `s` has `min(base * 2^s, cap)` filters, where `cap` is
/// `extended_cap` with channel extension and `decoder_cap` without. The
/// decoder always uses `decoder_cap`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub stages: usize,
    pub base_filters: usize,
    pub decoder_cap: usize,
    pub extended_cap: usize,
    pub channel_extend: bool,
    pub aac_enabled: bool,
    /// Per decoder stage enable mask (index = resolution level); empty means
    /// every decoder stage.
    pub aac_stages: Vec<bool>,
    pub aac_sequential: bool,
    pub in_channels: usize,
    pub num_classes: usize,
    pub heads: usize,
    pub norm_eps: f64,
    pub leaky_slope: f64,
    /// Maximum axis length the positional embeddings cover.
    pub pos_capacity: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            stages: 6,
            base_filters: 32,
            decoder_cap: 320,
            extended_cap: 512,
            channel_extend: true,
            aac_enabled: true,
            aac_stages: Vec::new(),
            aac_sequential: false,
            in_channels: 1,
            num_classes: crate::class::COUNT,
            heads: 1,
            norm_eps: 1e-5,
            leaky_slope: 0.01,
            pos_capacity: 128,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Desk-scale network: base 8, three stages.
    pub fn tiny() -> Self {
        NetworkConfig { stages: 3, base_filters: 8, pos_capacity: 64, ..Self::default() }
    }

    pub fn filter_cap(&self) -> usize {
        if self.channel_extend {
            self.extended_cap
        } else {
            self.decoder_cap
        }
    }

    pub fn aac_at(&self, stage: usize) -> bool {
        self.aac_enabled && (self.aac_stages.is_empty() || self.aac_stages.get(stage).copied().unwrap_or(false))
    }

    /// Downsampling factor between the input and the deepest stage.
    pub fn divisor(&self) -> usize {
        1 << (self.stages - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stages < 2 {
            return bad(format!("stages must be >= 2, got {}", self.stages));
        }
        if self.base_filters == 0 || self.in_channels == 0 {
            return bad("base_filters and in_channels must be positive".into());
        }
        if self.filter_cap() < self.base_filters || self.decoder_cap < self.base_filters {
            return bad(format!("filter cap {} below base filters {}", self.filter_cap(), self.base_filters));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.pos_capacity == 0 {
            return bad("pos_capacity must be positive".into());
        }
        for s in 0..self.stages - 1 {
            let (_, dec) = filter_schedule(self, s)?;
            if self.aac_at(s) && (self.heads == 0 || dec % self.heads != 0) {
                return bad(format!("{dec} decoder filters at stage {s} not divisible by {} heads", self.heads));
            }
        }
        Ok(())
    }
}

/// (encoder filters, decoder filters) at `stage`.
pub fn filter_schedule(cfg: &NetworkConfig, stage: usize) -> Result<(usize, usize)> {
    if stage >= cfg.stages {
        return Err(Error::invalid(format!("stage {stage} out of range for {} stages", cfg.stages)));
    }
    let raw = cfg.base_filters.saturating_mul(1usize.checked_shl(stage as u32).unwrap_or(usize::MAX));
    Ok((raw.min(cfg.filter_cap()), raw.min(cfg.decoder_cap)))
}
