//! VVOL: a minimal binary container for one volume or label map.
//!
//! ```text
//! b"VVOL"            magic
//! u32                version (= 1)
//! u8                 dtype: 0 = f32 intensities, 1 = i8 labels
//! 3 x u64            dims (depth, height, width)
//! 3 x f32            spacing, mm
//! 3 x f32            origin, mm
//! payload            product(dims) values, width fastest
//! ```
//!
//! Everything is little-endian.

use std::path::Path;

use crate::voxcore::Geometry;
use crate::{Error, LabelMap, Result, Volume};

const MAGIC: &[u8; 4] = b"VVOL";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 24 + 12 + 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    I8 = 1,
}

impl Dtype {
    fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::I8 => "i8",
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::I8 => 1,
        }
    }
}

fn header(g: &Geometry, dtype: Dtype, payload: usize) -> Vec<u8> {
    let mut b = Vec::with_capacity(HEADER_LEN + payload);
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.push(dtype as u8);
    for d in g.dims {
        b.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in g.spacing.iter().chain(&g.origin) {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

pub fn volume_to_bytes(v: &Volume) -> Vec<u8> {
    let mut b = header(v.geometry(), Dtype::F32, v.data().len() * 4);
    for x in v.data() {
        b.extend_from_slice(&x.to_le_bytes());
    }
    b
}

pub fn labels_to_bytes(m: &LabelMap) -> Vec<u8> {
    let mut b = header(m.geometry(), Dtype::I8, m.data().len());
    b.extend(m.data().iter().map(|&l| l as i8 as u8));
    b
}

fn parse(bytes: &[u8], want: Dtype) -> Result<(Geometry, &[u8])> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::BadMagic { expected: "VVOL".into(), found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::PayloadLength { expected: HEADER_LEN, found: bytes.len() });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = match bytes[8] {
        0 => Dtype::F32,
        1 => Dtype::I8,
        other => return Err(Error::invalid(format!("unknown dtype code {other}"))),
    };
    if dtype != want {
        return Err(Error::DtypeMismatch { expected: want.name(), found: dtype.name() });
    }
    let dims: [usize; 3] = std::array::from_fn(|a| u64_at(9 + 8 * a) as usize);
    let spacing = std::array::from_fn(|a| f32_at(33 + 4 * a));
    let origin = std::array::from_fn(|a| f32_at(45 + 4 * a));
    let geometry = Geometry::new(dims, spacing, origin)?;
    let expected = dims
        .iter()
        .try_fold(dtype.width(), |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::invalid(format!("dims {dims:?} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::PayloadLength { expected, found: payload.len() });
    }
    Ok((geometry, payload))
}

pub fn volume_from_bytes(bytes: &[u8]) -> Result<Volume> {
    let (g, payload) = parse(bytes, Dtype::F32)?;
    Volume::new(g, payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn labels_from_bytes(bytes: &[u8]) -> Result<LabelMap> {
    let (g, payload) = parse(bytes, Dtype::I8)?;
    if let Some(&bad) = payload.iter().find(|&&b| (b as i8) < 0) {
        return Err(Error::invalid(format!("negative label {}", bad as i8)));
    }
    LabelMap::new(g, payload.to_vec())
}

pub fn write_volume(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    std::fs::write(path, volume_to_bytes(v))?;
    Ok(())
}

pub fn write_labels(path: impl AsRef<Path>, m: &LabelMap) -> Result<()> {
    std::fs::write(path, labels_to_bytes(m))?;
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    volume_from_bytes(&std::fs::read(path)?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    labels_from_bytes(&std::fs::read(path)?)
}
