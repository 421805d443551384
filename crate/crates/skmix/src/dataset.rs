//! Manifest-driven datasets on disk.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use skmix_core::synth::SYNTH_LABELS;
use skmix_core::{synth_generate, ClipFeatures, Precision, Sample, SynthConfig};

use crate::container::{encode, read_container, ContainerError};
use crate::manifest::{read_manifest, write_manifest, Manifest, ManifestError, ManifestRecord, MANIFEST_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{path}: {source}")]
    Container {
        path: String,
        #[source]
        source: ContainerError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

/// One loaded video.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub record: ManifestRecord,
    pub clips: Vec<ClipFeatures>,
}

impl Video {
    pub fn sample(&self) -> Sample {
        Sample {
            clips: self.clips.clone(),
            targets: self.record.scores.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labels: Vec<String>,
    pub videos: Vec<Video>,
}

impl Dataset {
    pub fn samples(&self) -> Vec<Sample> {
        self.videos.iter().map(Video::sample).collect()
    }

    pub fn targets(&self) -> Vec<Vec<f64>> {
        self.videos.iter().map(|v| v.record.scores.clone()).collect()
    }
}

pub fn load_features(path: &Path) -> Result<Vec<ClipFeatures>, DataError> {
    read_container(path)
        .map(|(clips, _)| clips)
        .map_err(|source| DataError::Container {
            path: path.display().to_string(),
            source,
        })
}

/// Reads a manifest and every container it references, in manifest order.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, DataError> {
    let manifest = read_manifest(manifest_path)?;
    let labels = manifest
        .labels()
        .ok_or_else(|| DataError::Invalid(format!("{} has no records", manifest_path.display())))?
        .to_vec();
    let videos = manifest
        .records
        .iter()
        .map(|r| {
            let clips = load_features(&manifest.feature_path(r))?;
            Ok(Video {
                record: r.clone(),
                clips,
            })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    Ok(Dataset { labels, videos })
}

/// What `write_synth` produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub train_videos: usize,
    pub test_videos: usize,
    /// SHA-256 over both manifests and every container, in write order.
    pub sha256: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Generates a synthetic dataset into `dir`: `features/<id>.fsmx`
/// containers (32-bit), `train.jsonl`, and `test.jsonl` holding the last
/// `test_videos` videos.
pub fn write_synth(dir: &Path, config: &SynthConfig, test_videos: usize) -> Result<SynthOutput, DataError> {
    let videos = synth_generate(config).map_err(|e| DataError::Invalid(e.to_string()))?;
    if test_videos > videos.len() {
        return Err(DataError::Invalid(format!(
            "{test_videos} test videos requested from {}",
            videos.len()
        )));
    }
    let features = dir.join("features");
    fs::create_dir_all(&features).map_err(io_err(&features))?;
    let labels: Vec<String> = SYNTH_LABELS.iter().map(|s| s.to_string()).collect();
    let mut hasher = Sha256::new();
    let mut records = Vec::with_capacity(videos.len());
    for v in &videos {
        let rel = format!("features/{}.fsmx", v.id);
        let bytes = encode(&v.clips, Precision::F32).map_err(|source| DataError::Container {
            path: rel.clone(),
            source,
        })?;
        let path = dir.join(&rel);
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        hasher.update(&bytes);
        records.push(ManifestRecord {
            version: MANIFEST_VERSION,
            id: v.id.clone(),
            category: v.category,
            labels: labels.clone(),
            scores: v.scores.clone(),
            features: rel,
        });
    }
    let split = records.len() - test_videos;
    let test = records.split_off(split);
    let train_manifest = dir.join("train.jsonl");
    let test_manifest = dir.join("test.jsonl");
    let mut counts = [0; 2];
    for (i, (path, recs)) in [(&train_manifest, records), (&test_manifest, test)].into_iter().enumerate() {
        counts[i] = recs.len();
        let m = Manifest {
            records: recs,
            base: dir.to_path_buf(),
        };
        hasher.update(m.to_jsonl().as_bytes());
        write_manifest(path, &m)?;
    }
    Ok(SynthOutput {
        train_manifest,
        test_manifest,
        train_videos: counts[0],
        test_videos: counts[1],
        sha256: hex(&hasher.finalize()),
    })
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
