//! Axial attention catching module: positional embedding, three axial
//! attention branches (vertical = height, horizontal = width, depth),
//! channel concatenation, a pointwise merge back to C channels, and a
//! residual connection around the whole module.

use super::attention::{
    add_position, axial_core_backward, axial_core_forward, position_dims, position_grad, AxialAttention,
};
use super::conv::{conv3d_input_grad, conv3d_weight_grad, Conv3dLayer, ConvSpec};
use super::params::Params;
use crate::voxcore::Axis;
use crate::{Error, Result, Rng, Scalar, Tensor5};

/// Branch order: vertical, horizontal, depth.
pub const BRANCH_AXES: [Axis; 3] = [Axis::Height, Axis::Width, Axis::Depth];
const BRANCH_NAMES: [&str; 3] = ["attn_vertical", "attn_horizontal", "attn_depth"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchArrangement {
    /// All branches read the same embedded input.
    Parallel,
    /// Each branch reads the previous branch's output.
    Sequential,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AacModule<T: Scalar> {
    /// Indexed by `Axis::index()` (depth, height, width).
    pub pos: [Tensor5<T>; 3],
    /// Indexed like [`BRANCH_AXES`].
    pub branches: [AxialAttention<T>; 3],
    pub merge: Conv3dLayer<T>,
    pub arrangement: BranchArrangement,
}

#[derive(Clone, Debug)]
pub struct AacCache<T: Scalar> {
    inputs: [Tensor5<T>; 3],
    qkv: [Tensor5<T>; 3],
    concat: Tensor5<T>,
}

impl<T: Scalar> AacModule<T> {
    /// Zero-initialized module: with zero merge weights it is the identity.
    pub fn zeros(channels: usize, heads: usize, pos_capacity: usize, arrangement: BranchArrangement) -> Self {
        AacModule {
            pos: Axis::ALL.map(|a| Tensor5::zeros(position_dims(a, channels, pos_capacity))),
            branches: std::array::from_fn(|_| AxialAttention::zeros(channels, heads)),
            merge: Conv3dLayer::zeros(3 * channels, channels, ConvSpec::POINT, true),
            arrangement,
        }
    }

    pub fn channels(&self) -> usize {
        self.merge.out_channels()
    }

    /// Random projections; merge weights and embeddings stay zero.
    pub fn init_projections(&mut self, seed: u64, prefix: &str) {
        let c = self.channels() as f64;
        for (br, name) in self.branches.iter_mut().zip(BRANCH_NAMES) {
            let mut rng = Rng::for_name(seed, &format!("{prefix}.{name}.qkv"));
            for v in br.qkv.data_mut() {
                *v = T::c(rng.normal() / c.sqrt());
            }
        }
    }

    fn embedded(&self, x: &Tensor5<T>) -> Result<Tensor5<T>> {
        let mut xp = x.clone();
        for axis in Axis::ALL {
            add_position(&mut xp, &self.pos[axis.index()], axis)?;
        }
        Ok(xp)
    }

    pub fn forward(&self, x: &Tensor5<T>) -> Result<(Tensor5<T>, AacCache<T>)> {
        let c = self.channels();
        if x.dims().channels != c {
            return Err(Error::shape(format!("AAC expects {c} channels, input is {}", x.dims())));
        }
        let xp = self.embedded(x)?;
        let mut inputs: Vec<Tensor5<T>> = Vec::with_capacity(3);
        let mut qkvs = Vec::with_capacity(3);
        let mut outs: Vec<Tensor5<T>> = Vec::with_capacity(3);
        for (i, (br, axis)) in self.branches.iter().zip(BRANCH_AXES).enumerate() {
            let input = match (self.arrangement, i) {
                (BranchArrangement::Sequential, i) if i > 0 => outs[i - 1].clone(),
                _ => xp.clone(),
            };
            let qkv = br.project(&input)?;
            outs.push(axial_core_forward(&qkv, axis, br.heads)?);
            inputs.push(input);
            qkvs.push(qkv);
        }
        let concat = Tensor5::concat_channels(&Tensor5::concat_channels(&outs[0], &outs[1])?, &outs[2])?;
        let mut out = self.merge.forward(&concat)?;
        out.add_assign(x);
        let cache = AacCache {
            inputs: vec_to_array(inputs),
            qkv: vec_to_array(qkvs),
            concat,
        };
        Ok((out, cache))
    }

    pub fn backward(&self, cache: &AacCache<T>, grad_out: &Tensor5<T>, grad: &mut Self) -> Result<Tensor5<T>> {
        let c = self.channels();
        let mut dx = grad_out.clone();
        let dconcat = self
            .merge
            .backward(&cache.concat, grad_out, &mut grad.merge, true)?
            .expect("input gradient requested");
        let (d01, d2) = dconcat.split_channels(2 * c);
        let (d0, d1) = d01.split_channels(c);
        let mut douts = [d0, d1, d2];
        let mut dxp = Tensor5::zeros(grad_out.dims());
        for i in (0..3).rev() {
            let br = &self.branches[i];
            let axis = BRANCH_AXES[i];
            let dqkv = axial_core_backward(&cache.qkv[i], axis, br.heads, &douts[i])?;
            grad.branches[i].qkv.add_assign(&conv3d_weight_grad(&cache.inputs[i], &dqkv, ConvSpec::POINT)?);
            let dinput = conv3d_input_grad(&dqkv, &br.qkv, ConvSpec::POINT, cache.inputs[i].dims().spatial())?;
            match self.arrangement {
                BranchArrangement::Sequential if i > 0 => douts[i - 1].add_assign(&dinput),
                _ => dxp.add_assign(&dinput),
            }
        }
        for axis in Axis::ALL {
            position_grad(&dxp, axis, &mut grad.pos[axis.index()]);
        }
        dx.add_assign(&dxp);
        Ok(dx)
    }
}

fn vec_to_array<T>(v: Vec<T>) -> [T; 3] {
    v.try_into().unwrap_or_else(|_| unreachable!("three branches"))
}

impl<T: Scalar> Params<T> for AacModule<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor5<T>)) {
        for axis in Axis::ALL {
            f(&format!("{prefix}.pos_{}", axis.name()), &self.pos[axis.index()]);
        }
        for (br, name) in self.branches.iter().zip(BRANCH_NAMES) {
            f(&format!("{prefix}.{name}.qkv"), &br.qkv);
        }
        self.merge.visit(&format!("{prefix}.merge"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor5<T>)) {
        for axis in Axis::ALL {
            f(&format!("{prefix}.pos_{}", axis.name()), &mut self.pos[axis.index()]);
        }
        for (br, name) in self.branches.iter_mut().zip(BRANCH_NAMES) {
            f(&format!("{prefix}.{name}.qkv"), &mut br.qkv);
        }
        self.merge.visit_mut(&format!("{prefix}.merge"), f);
    }
}
