//! Feature container: one video's per-clip audio and video token matrices.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FSMX"
//! 4       2     format version (u16, currently 1)
//! 6       4     C   channels (u32)
//! 10      4     S_a audio tokens per clip (u32)
//! 14      4     S_v video tokens per clip (u32)
//! 18      4     T   clips (u32)
//! 22      1     precision flag: 0 = f32, 1 = f64
//! 23      ...   T × (audio S_a×C, then video S_v×C), row-major
//! ```

use std::fs;
use std::path::Path;

use skmix_core::{ClipFeatures, Precision, Tensor};

pub const MAGIC: [u8; 4] = *b"FSMX";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 23;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("not a feature container: first bytes {}", hex_bytes(.0))]
    BadMagic(Vec<u8>),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("size mismatch: header implies {expected} bytes, file has {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("unknown precision flag {0}")]
    BadPrecision(u8),
    #[error("invalid clips: {0}")]
    InvalidClips(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn hex_bytes(b: &[u8]) -> String {
    b.iter().map(|x| format!("0x{x:02x}")).collect::<Vec<_>>().join(" ")
}

impl ContainerError {
    /// Stable numeric code per error kind.
    pub fn code(&self) -> u8 {
        match self {
            ContainerError::BadMagic(_) => 1,
            ContainerError::UnsupportedVersion(_) => 2,
            ContainerError::SizeMismatch { .. } => 3,
            ContainerError::BadPrecision(_) => 4,
            ContainerError::InvalidClips(_) => 5,
            ContainerError::Io { .. } => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContainerMeta {
    pub channels: usize,
    pub audio_tokens: usize,
    pub video_tokens: usize,
    pub clips: usize,
    pub precision: Precision,
}

impl ContainerMeta {
    fn value_width(&self) -> usize {
        match self.precision {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    pub fn payload_len(&self) -> usize {
        self.clips * (self.audio_tokens + self.video_tokens) * self.channels * self.value_width()
    }
}

fn meta_of(clips: &[ClipFeatures], precision: Precision) -> Result<ContainerMeta, ContainerError> {
    let first = clips
        .first()
        .ok_or_else(|| ContainerError::InvalidClips("no clips".into()))?;
    let meta = ContainerMeta {
        channels: first.channels(),
        audio_tokens: first.audio_tokens(),
        video_tokens: first.video_tokens(),
        clips: clips.len(),
        precision,
    };
    for (i, c) in clips.iter().enumerate() {
        if c.channels() != meta.channels
            || c.audio_tokens() != meta.audio_tokens
            || c.video_tokens() != meta.video_tokens
        {
            return Err(ContainerError::InvalidClips(format!(
                "clip {i} has shape audio {:?} video {:?}, expected audio [{}, {}] video [{}, {}]",
                c.audio().shape(),
                c.video().shape(),
                meta.audio_tokens,
                meta.channels,
                meta.video_tokens,
                meta.channels
            )));
        }
    }
    Ok(meta)
}

fn u32_field(v: usize, what: &str) -> Result<[u8; 4], ContainerError> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| ContainerError::InvalidClips(format!("{what} {v} exceeds u32")))
}

pub fn encode(clips: &[ClipFeatures], precision: Precision) -> Result<Vec<u8>, ContainerError> {
    let meta = meta_of(clips, precision)?;
    let mut out = Vec::with_capacity(HEADER_LEN + meta.payload_len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32_field(meta.channels, "channels")?);
    out.extend_from_slice(&u32_field(meta.audio_tokens, "audio tokens")?);
    out.extend_from_slice(&u32_field(meta.video_tokens, "video tokens")?);
    out.extend_from_slice(&u32_field(meta.clips, "clips")?);
    out.push(match precision {
        Precision::F32 => 0,
        Precision::F64 => 1,
    });
    for clip in clips {
        for &v in clip.audio().data().iter().chain(clip.video().data()) {
            match precision {
                Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> usize {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
}

pub fn decode(bytes: &[u8]) -> Result<(Vec<ClipFeatures>, ContainerMeta), ContainerError> {
    if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
        if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
            return Err(ContainerError::SizeMismatch {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        return Err(ContainerError::BadMagic(bytes[..bytes.len().min(4)].to_vec()));
    }
    if bytes.len() < 6 {
        return Err(ContainerError::SizeMismatch {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    if bytes.len() < HEADER_LEN {
        return Err(ContainerError::SizeMismatch {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let precision = match bytes[22] {
        0 => Precision::F32,
        1 => Precision::F64,
        other => return Err(ContainerError::BadPrecision(other)),
    };
    let meta = ContainerMeta {
        channels: read_u32(bytes, 6),
        audio_tokens: read_u32(bytes, 10),
        video_tokens: read_u32(bytes, 14),
        clips: read_u32(bytes, 18),
        precision,
    };
    let expected = HEADER_LEN + meta.payload_len();
    if bytes.len() != expected {
        return Err(ContainerError::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    if meta.channels == 0 || meta.audio_tokens == 0 || meta.video_tokens == 0 || meta.clips == 0 {
        return Err(ContainerError::InvalidClips("zero extent in header".into()));
    }
    let payload = &bytes[HEADER_LEN..];
    let values: Vec<f64> = match precision {
        Precision::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect(),
        Precision::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect(),
    };
    let (c, sa, sv) = (meta.channels, meta.audio_tokens, meta.video_tokens);
    let per_clip = (sa + sv) * c;
    let clips = values
        .chunks_exact(per_clip)
        .map(|chunk| {
            let audio = Tensor::new(&[sa, c], chunk[..sa * c].to_vec())
                .map_err(|e| ContainerError::InvalidClips(e.to_string()))?;
            let video = Tensor::new(&[sv, c], chunk[sa * c..].to_vec())
                .map_err(|e| ContainerError::InvalidClips(e.to_string()))?;
            ClipFeatures::new(audio, video).map_err(|e| ContainerError::InvalidClips(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((clips, meta))
}

pub fn write_container(path: &Path, clips: &[ClipFeatures], precision: Precision) -> Result<(), ContainerError> {
    let bytes = encode(clips, precision)?;
    fs::write(path, bytes).map_err(|source| ContainerError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_container(path: &Path) -> Result<(Vec<ClipFeatures>, ContainerMeta), ContainerError> {
    let bytes = fs::read(path).map_err(|source| ContainerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}
