//! Analytic multiply-accumulate counts for attention over a (D, H, W) grid.
//!
//! With `N = D*H*W` tokens of width `C`:
//!
//! * projections (query, key, value): `3 * N * C^2`, identical in both modes;
//! * full attention scores plus weighted sum: `2 * C * N^2`;
//! * axial attention along axis `a` of length `L_a`: every token attends to
//!   the `L_a` tokens of its line, `2 * C * N * L_a` per axis.
//!
//! A sequence of length one needs no score matrix (its softmax is the
//! constant 1), so it contributes nothing to the score term. A single-voxel
//! grid therefore costs the same in both modes.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionMode {
    Axial,
    Full,
}

impl AttentionMode {
    pub fn name(self) -> &'static str {
        match self {
            AttentionMode::Axial => "axial",
            AttentionMode::Full => "full",
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "axial" => Ok(AttentionMode::Axial),
            "full" => Ok(AttentionMode::Full),
            _ => Err(crate::Error::invalid(format!("unknown attention mode {s:?} (axial|full)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionFlops {
    pub projection: u64,
    /// Score term per axis (depth, height, width) in axial mode; in full mode
    /// the whole term sits in `score` and this is zero.
    pub axis_score: [u64; 3],
    /// Score term per query token along each axis: `2 * C * L_a`.
    pub axis_score_per_token: [u64; 3],
    pub score: u64,
}

impl AttentionFlops {
    pub fn total(&self) -> u64 {
        self.projection + self.score
    }
}

/// MAC count for one attention layer over `dims` = (D, H, W) with `channels`
/// feature channels.
pub fn attention_flops(dims: [usize; 3], channels: usize, mode: AttentionMode) -> AttentionFlops {
    let c = channels as u64;
    let n: u64 = dims.iter().map(|&d| d as u64).product();
    let projection = 3 * n * c * c;
    match mode {
        AttentionMode::Full => AttentionFlops {
            projection,
            axis_score: [0; 3],
            axis_score_per_token: [0; 3],
            score: if n > 1 { 2 * c * n * n } else { 0 },
        },
        AttentionMode::Axial => {
            let mut axis_score = [0; 3];
            let mut per_token = [0; 3];
            for (a, &len) in dims.iter().enumerate() {
                if len > 1 {
                    per_token[a] = 2 * c * len as u64;
                    axis_score[a] = n * per_token[a];
                }
            }
            AttentionFlops { projection, axis_score, axis_score_per_token: per_token, score: axis_score.iter().sum() }
        }
    }
}
