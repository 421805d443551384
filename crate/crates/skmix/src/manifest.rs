//! Line-delimited JSON manifest, one record per video:
//!
//! ```text
//! {"version":1,"id":"synth-00000","category":"MS","labels":["total","long_range"],"scores":[0.5,0.0],"features":"features/synth-00000.fsmx"}
//! ```
//!
//! `features` is resolved relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skmix_core::{Category, ScoreVector};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub version: u32,
    pub id: String,
    pub category: Category,
    pub labels: Vec<String>,
    pub scores: Vec<f64>,
    pub features: String,
}

impl ManifestRecord {
    pub fn score_vector(&self) -> ScoreVector {
        ScoreVector {
            labels: self.labels.clone(),
            values: self.scores.clone(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{path}:{line}: {message}")]
    Record { path: String, line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    /// Directory that relative feature paths resolve against.
    pub base: PathBuf,
}

impl Manifest {
    pub fn labels(&self) -> Option<&[String]> {
        self.records.first().map(|r| r.labels.as_slice())
    }

    pub fn feature_path(&self, record: &ManifestRecord) -> PathBuf {
        let p = Path::new(&record.features);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, ManifestError> {
        let err = |line: usize, message: String| ManifestError::Record {
            path: path.display().to_string(),
            line,
            message,
        };
        let mut records: Vec<ManifestRecord> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(raw).map_err(|e| err(line, e.to_string()))?;
            if rec.version != MANIFEST_VERSION {
                return Err(err(line, format!("unsupported manifest version {}", rec.version)));
            }
            if rec.labels.len() != rec.scores.len() {
                return Err(err(
                    line,
                    format!("{} labels for {} scores", rec.labels.len(), rec.scores.len()),
                ));
            }
            if rec.scores.iter().any(|s| !s.is_finite()) {
                return Err(err(line, "non-finite score".into()));
            }
            if let Some(first) = records.first() {
                if first.labels != rec.labels {
                    return Err(err(
                        line,
                        format!("labels {:?} differ from {:?}", rec.labels, first.labels),
                    ));
                }
            }
            records.push(rec);
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest { records, base })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Manifest::parse(&text, path)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), ManifestError> {
    fs::write(path, manifest.to_jsonl()).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })
}
