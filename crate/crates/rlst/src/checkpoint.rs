//! Binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RLST1"
//! repeated: u32 name length, name (UTF-8), u32 rank, rank × u64 dims,
//!           product(dims) × f64 values
//! u64 FNV-1a hash of the value bytes of every tensor, in file order
//! ```

use std::path::Path;

use rlst_core::{ParameterSet, Tensor};

use crate::error::{CliError, Result};

const MAGIC: &[u8; 5] = b"RLST1";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn fnv1a(hash: u64, bytes: &[u8]) -> u64 {
    bytes.iter().fold(hash, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Named tensors in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_set(&mut self, set: &ParameterSet) -> &mut Self {
        for (name, t) in set.iter() {
            self.tensors.push((name.to_string(), Tensor::new(t.shape(), t.values().to_vec()).expect("valid tensor")));
        }
        self
    }

    /// Stores a scalar under `meta.<key>`.
    pub fn set_meta(&mut self, key: &str, value: f64) -> &mut Self {
        let name = format!("meta.{key}");
        self.tensors.retain(|(n, _)| *n != name);
        self.tensors.push((name, Tensor::new(&[1], vec![value]).expect("scalar")));
        self
    }

    pub fn meta(&self, key: &str) -> Option<f64> {
        let name = format!("meta.{key}");
        self.tensors.iter().find(|(n, _)| *n == name).map(|(_, t)| t.values()[0])
    }

    /// Tensors whose names start with `prefix.`, as a parameter set.
    pub fn parameter_set(&self, prefix: &str) -> rlst_core::Result<ParameterSet> {
        let mut set = ParameterSet::new();
        let p = format!("{prefix}.");
        for (name, t) in self.tensors.iter().filter(|(n, _)| n.starts_with(&p)) {
            set.add(name, t.clone())?;
        }
        Ok(set)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        let mut hash = FNV_OFFSET;
        for (name, t) in &self.tensors {
            out.extend((name.len() as u32).to_le_bytes());
            out.extend(name.as_bytes());
            out.extend((t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend((d as u64).to_le_bytes());
            }
            for &v in t.values() {
                out.extend(v.to_le_bytes());
                hash = fnv1a(hash, &v.to_le_bytes());
            }
        }
        out.extend(hash.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 8);
        let mut hash = FNV_OFFSET;
        let mut r = Reader { bytes: body, pos: MAGIC.len() };
        let mut tensors = Vec::new();
        while r.pos < body.len() {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| "tensor name is not UTF-8")?.to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("tensor size overflows")?;
            let raw = r.take(count.checked_mul(8).ok_or("tensor size overflows")?)?;
            hash = fnv1a(hash, raw);
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let tensor = Tensor::new(&dims, values).map_err(|e| format!("tensor `{name}`: {e}"))?;
            tensors.push((name, tensor));
        }
        if hash != u64::from_le_bytes(trailer.try_into().expect("8 bytes")) {
            return Err("checksum mismatch (file is corrupt or truncated)".into());
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|m| CliError::format(path, m))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("unexpected end of checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut set = ParameterSet::new();
        set.add("m.w", Tensor::new(&[2, 3], vec![1.0, -2.5, 3.0, 0.0, f64::MIN_POSITIVE, 1e300]).unwrap()).unwrap();
        set.add("m.b", Tensor::new(&[3], vec![0.1, 0.2, 0.3]).unwrap()).unwrap();
        let mut c = Checkpoint::new();
        c.add_set(&set).set_meta("step", 42.0);
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.meta("step"), Some(42.0));
        let set = back.parameter_set("m").unwrap();
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 12] ^= 1;
        assert!(Checkpoint::from_bytes(&bytes).unwrap_err().contains("checksum"));
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }
}
