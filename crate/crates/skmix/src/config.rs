//! Run configuration, read from TOML. Unknown keys are rejected at every
//! level. Relative paths resolve against the config file's directory.
//!
//! ```toml
//! seed = 0
//! precision = 32            # 32 or 64
//! output_dir = "runs/toy"
//!
//! [model]                   # channels, audio_tokens, video_tokens, max_clips, heads,
//! channels = 32             # variant, scoring, depths, bottleneck_ratio,
//! audio_tokens = 4          # token_hidden, channel_expansion, labels
//! video_tokens = 6
//! max_clips = 12
//! heads = 2
//! variant = "mru-bid"       # mixer | mixer-mem | mru | mru-bid
//! scoring = "both"          # cls-only | mem-only | both
//!
//! [train]                   # lr, weight_decay, beta1, beta2, eps, epochs, batch_size
//! epochs = 40
//!
//! [data]
//! train = "runs/toy/train.jsonl"   # default: <output_dir>/train.jsonl
//! test = "runs/toy/test.jsonl"     # default: <output_dir>/test.jsonl
//! test_videos = 50                 # held-out videos written by `synth`
//! rank_k = 10
//!
//! [synth]                   # see SynthConfig
//! [gradcheck]               # eps, tolerance, clips
//! [flops]                   # sweep = [8, 16, 32]
//! [ablate]                  # variants, scoring
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skmix_core::{FusionVariant, ModelConfig, Precision, ScoringTokenMode, SynthConfig, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_precision")]
    pub precision: u32,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
    #[serde(default)]
    pub flops: FlopsConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
}

fn default_precision() -> u32 {
    32
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Training settings; the shuffle seed comes from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            weight_decay: t.weight_decay,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            epochs: t.epochs,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub test_videos: usize,
    pub rank_k: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            test: None,
            test_videos: 50,
            rank_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    pub clips: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            eps: skmix_core::gradcheck::DEFAULT_EPS,
            tolerance: 1e-4,
            clips: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlopsConfig {
    pub sweep: Vec<usize>,
}

impl Default for FlopsConfig {
    fn default() -> Self {
        FlopsConfig {
            sweep: vec![4, 8, 16, 32, 64, 128],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub variants: Vec<FusionVariant>,
    pub scoring: Vec<ScoringTokenMode>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            variants: FusionVariant::ALL.to_vec(),
            scoring: ScoringTokenMode::ALL.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.output_dir = resolve(base, &cfg.output_dir);
        cfg.data.train = cfg.data.train.as_deref().map(|p| resolve(base, p));
        cfg.data.test = cfg.data.test.as_deref().map(|p| resolve(base, p));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: skmix_core::Error| ConfigError::Invalid(e.to_string());
        self.precision()?;
        self.model.validate().map_err(invalid)?;
        self.train_config().validate().map_err(invalid)?;
        self.synth.validate().map_err(invalid)?;
        if self.data.test_videos > self.synth.num_videos {
            return Err(ConfigError::Invalid(format!(
                "test_videos {} exceeds synth.num_videos {}",
                self.data.test_videos, self.synth.num_videos
            )));
        }
        if self.synth.max_clips > self.model.max_clips {
            return Err(ConfigError::Invalid(format!(
                "synth.max_clips {} exceeds model.max_clips {}",
                self.synth.max_clips, self.model.max_clips
            )));
        }
        if !(self.gradcheck.eps > 0.0 && self.gradcheck.tolerance > 0.0) || self.gradcheck.clips == 0 {
            return Err(ConfigError::Invalid("gradcheck eps, tolerance and clips must be positive".into()));
        }
        if self.flops.sweep.contains(&0) {
            return Err(ConfigError::Invalid("flops sweep entries must be positive".into()));
        }
        Ok(())
    }

    pub fn precision(&self) -> Result<Precision, ConfigError> {
        Precision::from_bits(self.precision)
            .ok_or_else(|| ConfigError::Invalid(format!("precision must be 32 or 64, got {}", self.precision)))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            weight_decay: t.weight_decay,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: self.seed,
        }
    }

    pub fn train_manifest(&self) -> PathBuf {
        self.data.train.clone().unwrap_or_else(|| self.output_dir.join("train.jsonl"))
    }

    pub fn test_manifest(&self) -> PathBuf {
        self.data.test.clone().unwrap_or_else(|| self.output_dir.join("test.jsonl"))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
