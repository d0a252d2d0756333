//! Binary checkpoint container.
//!
//! ```text
//! b"CNCK"  u32 version (=1)
//! u32 config_len  config_len bytes of NetworkConfig as TOML (UTF-8)
//! u32 tensor_count
//! per tensor: u32 name_len, name (UTF-8), 5 x u64 dims, f32 payload
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::config::NetworkConfig;
use super::network::Network;
use super::params::Params;
use crate::{Dims5, Error, Result, Tensor5};

const MAGIC: &[u8; 4] = b"CNCK";
const VERSION: u32 = 1;

pub fn write_checkpoint(w: &mut impl Write, net: &Network<f32>) -> Result<()> {
    let cfg = toml::to_string(net.config()).map_err(|e| Error::Config(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg.as_bytes())?;
    let named = net.named_params();
    w.write_all(&(named.len() as u32).to_le_bytes())?;
    for (name, t) in named {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&t.to_bytes())?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Network<f32>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic = c.take(4).map_err(|_| Error::BadMagic {
        expected: "CNCK".into(),
        found: String::from_utf8_lossy(bytes).into_owned(),
    })?;
    if magic != MAGIC {
        return Err(Error::BadMagic { expected: "CNCK".into(), found: String::from_utf8_lossy(magic).into_owned() });
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let cfg_len = c.u32()? as usize;
    let cfg: NetworkConfig = toml::from_str(c.utf8(cfg_len)?).map_err(|e| Error::Config(e.to_string()))?;
    let mut net = Network::<f32>::zeros(cfg)?;
    let count = c.u32()? as usize;
    let mut loaded = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = c.utf8(name_len)?.to_string();
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = c.u64()? as usize;
        }
        let dims = Dims5::new(dims[0], dims[1], dims[2], dims[3], dims[4]);
        let payload = c.take(dims.len() * 4)?;
        let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        loaded.push((name, Tensor5::from_vec(dims, data)?));
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let mut expected = 0;
    net.visit("", &mut |_, _| expected += 1);
    if expected != loaded.len() {
        return Err(Error::Checkpoint(format!(
            "config describes {expected} tensors, file holds {}",
            loaded.len()
        )));
    }
    let mut it = loaded.into_iter();
    let mut mismatch = None;
    net.visit_mut("", &mut |name, t| {
        let (n, v) = it.next().expect("counted above");
        if mismatch.is_some() {
            return;
        }
        if n != name || v.dims() != t.dims() {
            mismatch = Some(format!("expected {name} {}, found {n} {}", t.dims(), v.dims()));
        } else {
            *t = v;
        }
    });
    match mismatch {
        Some(m) => Err(Error::Checkpoint(m)),
        None => Ok(net),
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &Network<f32>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, net)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network<f32>> {
    read_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network<f32> {
        let cfg = NetworkConfig { base_filters: 2, stages: 3, pos_capacity: 8, seed: 3, ..NetworkConfig::default() };
        let mut n = Network::new(cfg).unwrap();
        n.perturb(1, 0.1);
        n
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let n = net();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &n).unwrap();
        let back = read_checkpoint(&buf).unwrap();
        assert_eq!(back.config(), n.config());
        for ((na, a), (nb, b)) in n.named_params().into_iter().zip(back.named_params()) {
            assert_eq!(na, nb);
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad), Err(Error::BadMagic { .. })));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_checkpoint(&bad), Err(Error::UnsupportedVersion(9))));
        assert!(matches!(read_checkpoint(&buf[..buf.len() - 3]), Err(Error::Checkpoint(_))));
    }
}
