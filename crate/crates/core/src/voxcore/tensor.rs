use super::Scalar;
use crate::{Error, Result};

/// Extents of a rank-5 tensor laid out as (batch, channel, depth, height,
/// width), row-major with width fastest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims5 {
    pub batch: usize,
    pub channels: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims5 {
    pub const fn new(batch: usize, channels: usize, depth: usize, height: usize, width: usize) -> Self {
        Dims5 { batch, channels, depth, height, width }
    }

    pub fn len(&self) -> usize {
        self.batch * self.channels * self.spatial_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.depth, self.height, self.width]
    }

    pub fn spatial_len(&self) -> usize {
        self.depth * self.height * self.width
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Dims5 { channels, ..self }
    }

    pub fn with_spatial(self, [depth, height, width]: [usize; 3]) -> Self {
        Dims5 { depth, height, width, ..self }
    }

    pub fn as_array(&self) -> [usize; 5] {
        [self.batch, self.channels, self.depth, self.height, self.width]
    }

    #[inline]
    pub fn offset(&self, b: usize, c: usize, z: usize, y: usize, x: usize) -> usize {
        (((b * self.channels + c) * self.depth + z) * self.height + y) * self.width + x
    }
}

impl std::fmt::Display for Dims5 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, {}, {}, {}, {})",
            self.batch, self.channels, self.depth, self.height, self.width
        )
    }
}

/// Dense rank-5 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor5<T = f32> {
    dims: Dims5,
    data: Vec<T>,
}

impl<T: Scalar> Tensor5<T> {
    pub fn zeros(dims: Dims5) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: Dims5, value: T) -> Self {
        Tensor5 { dims, data: vec![value; dims.len()] }
    }

    pub fn from_vec(dims: Dims5, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::shape(format!(
                "data length {} does not match dims {dims} (product {})",
                data.len(),
                dims.len()
            )));
        }
        Ok(Tensor5 { dims, data })
    }

    pub fn from_fn(dims: Dims5, mut f: impl FnMut([usize; 5]) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for b in 0..dims.batch {
            for c in 0..dims.channels {
                for z in 0..dims.depth {
                    for y in 0..dims.height {
                        for x in 0..dims.width {
                            data.push(f([b, c, z, y, x]));
                        }
                    }
                }
            }
        }
        Tensor5 { dims, data }
    }

    pub fn dims(&self) -> Dims5 {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, z: usize, y: usize, x: usize) -> T {
        self.data[self.dims.offset(b, c, z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, z: usize, y: usize, x: usize, v: T) {
        let o = self.dims.offset(b, c, z, y, x);
        self.data[o] = v;
    }

    /// Contiguous spatial block of one (batch, channel) pair.
    pub fn channel(&self, b: usize, c: usize) -> &[T] {
        let n = self.dims.spatial_len();
        let start = (b * self.dims.channels + c) * n;
        &self.data[start..start + n]
    }

    pub fn channel_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let n = self.dims.spatial_len();
        let start = (b * self.dims.channels + c) * n;
        &mut self.data[start..start + n]
    }

    /// All channels of one batch item.
    pub fn item(&self, b: usize) -> &[T] {
        let n = self.dims.channels * self.dims.spatial_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.dims.channels * self.dims.spatial_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor5 { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor5<U> {
        Tensor5 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|&v| U::from(v).expect("finite scalar cast"))
                .collect(),
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.dims, other.dims, "add_assign dims");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v = *v * s);
    }

    pub fn dot(&self, other: &Self) -> T {
        assert_eq!(self.dims, other.dims, "dot dims");
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.dims, other.dims, "max_abs_diff dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// Concatenates two tensors along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        let (da, db) = (a.dims, b.dims);
        if da.batch != db.batch || da.spatial() != db.spatial() {
            return Err(Error::shape(format!("cannot concatenate {da} with {db}")));
        }
        let dims = da.with_channels(da.channels + db.channels);
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..da.batch {
            data.extend_from_slice(a.item(n));
            data.extend_from_slice(b.item(n));
        }
        Ok(Tensor5 { dims, data })
    }

    /// Splits off the first `at` channels; inverse of `concat_channels`.
    pub fn split_channels(&self, at: usize) -> (Self, Self) {
        let d = self.dims;
        assert!(at <= d.channels, "split point beyond channel count");
        let n = d.spatial_len();
        let mut first = Vec::with_capacity(d.batch * at * n);
        let mut second = Vec::with_capacity(d.batch * (d.channels - at) * n);
        for b in 0..d.batch {
            let item = self.item(b);
            first.extend_from_slice(&item[..at * n]);
            second.extend_from_slice(&item[at * n..]);
        }
        (
            Tensor5 { dims: d.with_channels(at), data: first },
            Tensor5 { dims: d.with_channels(d.channels - at), data: second },
        )
    }
}

const TENSOR_HEADER: usize = 5 * 8;

impl Tensor5<f32> {
    /// Serializes as five little-endian `u64` extents followed by the
    /// little-endian `f32` payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(TENSOR_HEADER + 4 * self.data.len());
        for d in self.dims.as_array() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < TENSOR_HEADER {
            return Err(Error::PayloadLength { expected: TENSOR_HEADER, found: bytes.len() });
        }
        let mut ext = [0usize; 5];
        for (i, e) in ext.iter_mut().enumerate() {
            let raw: [u8; 8] = bytes[i * 8..i * 8 + 8].try_into().expect("8-byte slice");
            *e = u64::from_le_bytes(raw) as usize;
        }
        let dims = Dims5::new(ext[0], ext[1], ext[2], ext[3], ext[4]);
        let payload = &bytes[TENSOR_HEADER..];
        if payload.len() != 4 * dims.len() {
            return Err(Error::PayloadLength { expected: 4 * dims.len(), found: payload.len() });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        Ok(Tensor5 { dims, data })
    }
}
