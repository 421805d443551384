//! Synthetic planted-signal datasets.
//!
//! Each clip carries two binary markers, `a_t` (audio) and `v_t` (video).
//! A marked clip has a fixed unit vector added to every token of that
//! modality on top of Gaussian noise. Two scores are emitted:
//!
//! ```text
//! head 1:  S = c1·(Σ_t a_t·v_t)/T + c2·a_1·v_T
//! head 2:      c2·a_1·v_T
//! ```
//!
//! The first term is visible inside single clips; the second links the
//! first and last clip, so only a model that carries information across
//! clips can represent it.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mru::ClipFeatures;
use crate::tensor::Tensor;

/// Competition category tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    MS,
    MF,
    LS,
    LF,
    PS,
    PF,
    IR,
    IF,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::MS,
        Category::MF,
        Category::LS,
        Category::LF,
        Category::PS,
        Category::PF,
        Category::IR,
        Category::IF,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::MS => "MS",
            Category::MF => "MF",
            Category::LS => "LS",
            Category::LF => "LF",
            Category::PS => "PS",
            Category::PF => "PF",
            Category::IR => "IR",
            Category::IF => "IF",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown category `{s}`")))
    }
}

pub const SYNTH_LABELS: [&str; 2] = ["total", "long_range"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_videos: usize,
    pub min_clips: usize,
    pub max_clips: usize,
    pub channels: usize,
    pub audio_tokens: usize,
    pub video_tokens: usize,
    /// Noise scale σ.
    pub sigma: f64,
    /// Marker probability.
    pub p: f64,
    /// Weight of the within-clip co-occurrence term.
    pub c1: f64,
    /// Weight of the first-clip/last-clip term.
    pub c2: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            num_videos: 250,
            min_clips: 6,
            max_clips: 12,
            channels: 32,
            audio_tokens: 4,
            video_tokens: 6,
            sigma: 0.5,
            p: 0.5,
            c1: 1.0,
            c2: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub id: String,
    pub category: Category,
    pub clips: Vec<ClipFeatures>,
    /// `(a_t, v_t)` per clip.
    pub markers: Vec<(bool, bool)>,
    /// `[S, c2·a_1·v_T]`
    pub scores: Vec<f64>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_clips == 0 || self.min_clips > self.max_clips {
            return Err(Error::config(format!(
                "empty clip range {}..={}",
                self.min_clips, self.max_clips
            )));
        }
        if self.channels == 0 || self.audio_tokens == 0 || self.video_tokens == 0 {
            return Err(Error::config("synthetic dimensions must be positive"));
        }
        if !(self.c1 >= 0.0 && self.c2 >= 0.0) {
            return Err(Error::config("c1 and c2 must be non-negative"));
        }
        if !(self.p >= 0.0 && self.p <= 1.0) {
            return Err(Error::config("p must lie in [0, 1]"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma must be finite and non-negative"));
        }
        Ok(())
    }

    /// Unit-norm audio and video marker directions derived from the seed,
    /// rounded to `f32`.
    pub fn markers(&self) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut unit = || {
            let v: Vec<f64> = (0..self.channels)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            v.into_iter().map(|x| (x / norm) as f32 as f64).collect::<Vec<f64>>()
        };
        let ua = unit();
        let uv = unit();
        (ua, uv)
    }

    /// Ground truth for a marker sequence.
    pub fn scores_for(&self, markers: &[(bool, bool)]) -> [f64; 2] {
        let t = markers.len() as f64;
        let co = markers.iter().filter(|(a, v)| *a && *v).count() as f64;
        let first_a = markers.first().is_some_and(|m| m.0);
        let last_v = markers.last().is_some_and(|m| m.1);
        let long = if first_a && last_v { self.c2 } else { 0.0 };
        [self.c1 * co / t + long, long]
    }

    fn video(&self, index: usize, ua: &[f64], uv: &[f64]) -> Result<SynthVideo> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        let t = rng.random_range(self.min_clips..=self.max_clips);
        let category = Category::ALL[rng.random_range(0..Category::ALL.len())];
        let c = self.channels;
        let tokens = |rng: &mut ChaCha8Rng, n: usize, marked: bool, u: &[f64]| {
            let data: Vec<f64> = (0..n * c)
                .map(|i| {
                    let z: f64 = StandardNormal.sample(rng);
                    let shift = if marked { u[i % c] } else { 0.0 };
                    (self.sigma * z + shift) as f32 as f64
                })
                .collect();
            Tensor::new(&[n, c], data)
        };
        let mut clips = Vec::with_capacity(t);
        let mut markers = Vec::with_capacity(t);
        for _ in 0..t {
            let a = rng.random_bool(self.p);
            let v = rng.random_bool(self.p);
            let audio = tokens(&mut rng, self.audio_tokens, a, ua)?;
            let video = tokens(&mut rng, self.video_tokens, v, uv)?;
            clips.push(ClipFeatures::new(audio, video)?);
            markers.push((a, v));
        }
        let scores = self.scores_for(&markers).to_vec();
        Ok(SynthVideo {
            id: format!("synth-{index:05}"),
            category,
            clips,
            markers,
            scores,
        })
    }
}

/// Generates `config.num_videos` videos. Video `i` depends only on
/// `(seed, i)` and the shape parameters.
pub fn synth_generate(config: &SynthConfig) -> Result<Vec<SynthVideo>> {
    config.validate()?;
    let (ua, uv) = config.markers();
    (0..config.num_videos).map(|i| config.video(i, &ua, &uv)).collect()
}
