use super::{Dims5, Scalar, Tensor5};
use crate::{class, Error, Result};

/// Spatial axis of a volume, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    Depth = 0,
    Height = 1,
    Width = 2,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Depth, Axis::Height, Axis::Width];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Depth => "depth",
            Axis::Height => "height",
            Axis::Width => "width",
        }
    }
}

/// Grid extents plus physical placement in millimetres. `origin` is the
/// position of the centre of voxel (0, 0, 0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub origin: [f32; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], origin: [f32; 3]) -> Result<Self> {
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing:?}")));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("dims must be positive, got {dims:?}")));
        }
        Ok(Geometry { dims, spacing, origin })
    }

    pub fn isotropic(dims: [usize; 3], spacing: f32) -> Self {
        Geometry::new(dims, [spacing; 3], [0.0; 3]).expect("valid isotropic geometry")
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[2];
        let y = (i / self.dims[2]) % self.dims[1];
        let z = i / (self.dims[1] * self.dims[2]);
        [z, y, x]
    }

    pub fn extent_mm(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.dims[a] as f64 * self.spacing[a] as f64)
    }
}

/// Scalar intensity volume (HU or normalized).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::shape(format!(
                "volume data length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        Ok(Volume { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: f32) -> Self {
        Volume { data: vec![value; geometry.len()], geometry }
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut([usize; 3]) -> f32) -> Self {
        let data = (0..geometry.len()).map(|i| f(geometry.coords(i))).collect();
        Volume { geometry, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.geometry.index(z, y, x)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Single-batch, single-channel tensor view of the intensities.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor5<T> {
        let [d, h, w] = self.geometry.dims;
        let data = self.data.iter().map(|&v| T::from(v).expect("finite")).collect();
        Tensor5::from_vec(Dims5::new(1, 1, d, h, w), data).expect("volume dims")
    }
}

/// Integer class map over {background, kidney, tumor, artery, vein}.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    geometry: Geometry,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(geometry: Geometry, data: Vec<u8>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::shape(format!(
                "label data length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| v as usize >= class::COUNT) {
            return Err(Error::invalid(format!("label {bad} outside the class set")));
        }
        Ok(LabelMap { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        LabelMap { data: vec![0; geometry.len()], geometry }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Mutable access; callers keep values inside the class set.
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> u8 {
        self.data[self.geometry.index(z, y, x)]
    }

    pub fn set(&mut self, z: usize, y: usize, x: usize, label: u8) {
        debug_assert!((label as usize) < class::COUNT);
        let i = self.geometry.index(z, y, x);
        self.data[i] = label;
    }

    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }

    pub fn mask(&self, label: u8) -> Vec<bool> {
        self.data.iter().map(|&v| v == label).collect()
    }

    /// Sorted distinct labels present.
    pub fn label_set(&self) -> Vec<u8> {
        let mut seen = [false; class::COUNT];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..class::COUNT as u8).filter(|&l| seen[l as usize]).collect()
    }

    pub fn same_grid(&self, other: &Geometry) -> bool {
        self.geometry.dims == other.dims && self.geometry.spacing == other.spacing
    }
}
