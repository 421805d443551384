//! Binary checkpoint: model configuration, every named parameter and,
//! optionally, the optimizer moments.
//!
//! ```text
//! "SKCK"  u16 version  u8 precision (0 = f32, 1 = f64)
//! u32 len, model config as JSON
//! u32 parameter count, then per parameter:
//!     u32 name len, name, u32 rank, u32 dims.., f64 values..
//! u8 has_optimizer; if 1: u64 step, then m values and v values per parameter
//! ```
//!
//! Values are stored as `f64` regardless of precision, so a round trip is
//! bit-exact in both modes.

use std::fs;
use std::path::Path;

use skmix_core::train::AdamState;
use skmix_core::{ModelConfig, ParamStore, Precision, SkatingMixer, Tensor};

pub const MAGIC: [u8; 4] = *b"SKCK";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: first bytes {}", crate::container::hex_bytes(.0))]
    BadMagic(Vec<u8>),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated checkpoint at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after checkpoint")]
    Trailing(usize),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not fit model: {0}")]
    Mismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub precision: Precision,
    pub params: Vec<(String, Tensor)>,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn capture(config: &ModelConfig, store: &ParamStore, adam: Option<&AdamState>) -> Self {
        Checkpoint {
            config: config.clone(),
            precision: store.precision(),
            params: store.iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            adam: adam.cloned(),
        }
    }

    /// Rebuilds the model and loads the stored values.
    pub fn restore(&self) -> Result<(SkatingMixer, ParamStore), CheckpointError> {
        let mut store = ParamStore::new(self.precision);
        let model = SkatingMixer::build(&self.config, &mut store, 0)
            .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
        store
            .load_values(&self.params)
            .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
        if let Some(adam) = &self.adam {
            if !adam.matches(&store) {
                return Err(CheckpointError::Mismatch("optimizer moments do not match parameters".into()));
            }
        }
        Ok((model, store))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match self.precision {
            Precision::F32 => 0,
            Precision::F64 => 1,
        });
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        put_u32(&mut out, json.len());
        out.extend_from_slice(&json);
        put_u32(&mut out, self.params.len());
        for (name, t) in &self.params {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            put_values(&mut out, t.data());
        }
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.step.to_le_bytes());
                for m in &a.m {
                    put_values(&mut out, m.data());
                }
                for v in &a.v {
                    put_values(&mut out, v.data());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic(bytes[..bytes.len().min(4)].to_vec()));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let precision = match r.take(1)?[0] {
            0 => Precision::F32,
            1 => Precision::F64,
            other => return Err(CheckpointError::Corrupt(format!("unknown precision flag {other}"))),
        };
        let len = r.u32()?;
        let config: ModelConfig =
            serde_json::from_slice(r.take(len)?).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let count = r.u32()?;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32()?;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| CheckpointError::Corrupt("parameter name is not UTF-8".into()))?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let data = r.values(shape.iter().product())?;
            let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Corrupt(format!("{name}: {e}")))?;
            params.push((name, t));
        }
        let adam = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
                let mut moments = || {
                    params
                        .iter()
                        .map(|(_, t)| Tensor::new(t.shape(), r.values(t.len())?).map_err(|e| CheckpointError::Corrupt(e.to_string())))
                        .collect::<Result<Vec<_>, _>>()
                };
                let m = moments()?;
                let v = moments()?;
                Some(AdamState { step, m, v })
            }
            other => return Err(CheckpointError::Corrupt(format!("optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(CheckpointError::Trailing(bytes.len() - r.pos));
        }
        Ok(Checkpoint {
            config,
            precision,
            params,
            adam,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field fits in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_values(out: &mut Vec<u8>, data: &[f64]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated(self.bytes.len()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    fs::write(path, ckpt.encode()).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Checkpoint::decode(&bytes)
}
