pub mod folds;
pub mod gradcheck;
pub mod phantom;
pub mod vvol;
pub mod train;
pub mod infer;
pub mod bench;
pub mod pipeline;
