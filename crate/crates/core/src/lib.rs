//! Multi-structure kidney segmentation: a channel-extended 3D encoder-decoder
//! with axial attention in the decoder, trained with dice + cross-entropy and
//! evaluated with DSC / Hausdorff / average surface distance.
//!
//! Everything runs on the CPU with exact reverse-mode gradients. The network
//! is generic over `f32` (training, inference) and `f64` (gradient checks).

pub mod error;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod postproc;
pub mod prep;
pub mod voxcore;

pub use error::{Error, Result};
pub use voxcore::{Dims5, LabelMap, Rng, Scalar, Tensor5, Volume};

/// Class ids of the label set.
pub mod class {
    pub const BACKGROUND: u8 = 0;
    pub const KIDNEY: u8 = 1;
    pub const TUMOR: u8 = 2;
    pub const ARTERY: u8 = 3;
    pub const VEIN: u8 = 4;
    pub const COUNT: usize = 5;
    pub const FOREGROUND: [u8; 4] = [KIDNEY, TUMOR, ARTERY, VEIN];

    pub fn name(id: u8) -> &'static str {
        match id {
            BACKGROUND => "background",
            KIDNEY => "kidney",
            TUMOR => "tumor",
            ARTERY => "artery",
            VEIN => "vein",
            _ => "unknown",
        }
    }
}
