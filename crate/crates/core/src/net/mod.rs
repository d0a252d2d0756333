//! Channel-extended encoder-decoder with axial attention catching modules
//! in the decoder.
//!
//! Encoder stage `s` runs two conv-norm-activation blocks (the first one
//! strided for `s > 0`). Each decoder stage upsamples with a stride-2
//! transposed convolution, optionally applies an [`AacModule`], concatenates
//! the matching encoder output, and runs two more blocks. A pointwise
//! projection produces the class logits.

pub mod aac;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod flops;
pub mod network;
pub mod norm;
pub mod params;

pub use aac::{AacModule, BranchArrangement, BRANCH_AXES};
pub use attention::{axial_attention, position_dims, AxialAttention};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{filter_schedule, NetworkConfig};
pub use conv::{conv3d, transposed_conv3d, Conv3dLayer, ConvSpec, TransposedConv3dLayer};
pub use flops::{attention_flops, AttentionFlops, AttentionMode};
pub use network::{Network, Tape};
pub use norm::{instance_norm_act, Activation};
pub use params::{Gradients, Params};

/// Total number of scalar parameters.
pub fn param_count<T: crate::Scalar>(net: &Network<T>) -> usize {
    net.param_count()
}
