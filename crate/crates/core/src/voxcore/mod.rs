//! Dense containers and shared numeric primitives.

mod linalg;
mod numeric;
mod rng;
mod scalar;
mod tensor;
mod volume;

pub use linalg::{gemm, MatMut, MatRef};
pub use numeric::{percentile, percentile_sorted, softmax_channels};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::{Dims5, Tensor5};
pub use volume::{Axis, Geometry, LabelMap, Volume};
