//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "EBMGEOCK"                     magic
//! u32                            format version
//! str                            architecture descriptor
//! u64                            seed
//! u32, (str, str)*               metadata entries
//! u32, (str, u32, u64*, f64*)*   named arrays: name, rank, shape, values
//! "CKPT-END"                     end marker
//! ```
//!
//! where `str` is a `u32` byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::path::Path;

use ebmgeo_core::nets::Parameterized;
use ebmgeo_core::Tensor;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"EBMGEOCK";
pub const END_MARKER: &[u8; 8] = b"CKPT-END";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint truncated while reading {what}")]
    Truncated { what: &'static str },
    #[error("architecture mismatch: checkpoint holds {found:?}, expected {expected:?}")]
    DescriptorMismatch { expected: String, found: String },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub seed: u64,
    pub metadata: BTreeMap<String, String>,
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model<M: Parameterized>(model: &M, seed: u64, metadata: BTreeMap<String, String>) -> Self {
        Checkpoint {
            descriptor: model.descriptor(),
            seed,
            metadata,
            arrays: model.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect(),
        }
    }

    /// Copies the stored parameters into `model`, which must have the same architecture.
    pub fn restore_into<M: Parameterized>(&self, model: &mut M) -> Result<(), CheckpointError> {
        let expected = model.descriptor();
        if expected != self.descriptor {
            return Err(CheckpointError::DescriptorMismatch {
                expected,
                found: self.descriptor.clone(),
            });
        }
        model.load_named(&self.arrays).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.descriptor);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(END_MARKER);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: version });
        }
        let descriptor = r.string("descriptor")?;
        let seed = r.u64("seed")?;
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32("metadata count")? {
            let k = r.string("metadata key")?;
            let v = r.string("metadata value")?;
            metadata.insert(k, v);
        }
        let n = r.u32("array count")?;
        let mut arrays = Vec::with_capacity(n.min(1024) as usize);
        for _ in 0..n {
            let name = r.string("array name")?;
            let rank = r.u32("array rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64("array shape")? as usize);
            }
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len.filter(|&l| l <= (bytes.len() - r.pos) / 8).ok_or(CheckpointError::Truncated { what: "array values" })?;
            let raw = r.take(8 * len, "array values")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            arrays.push((name, t));
        }
        if r.take(8, "end marker")? != END_MARKER {
            return Err(CheckpointError::Corrupt("end marker missing".into()));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            descriptor,
            seed,
            metadata,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated { what })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &'static str) -> Result<String, CheckpointError> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| CheckpointError::Corrupt(format!("{what} is not UTF-8")))
    }
}
