//! The full scoring model: bidirectional MRU sweeps, the CLS mixer, the
//! dual-token head, and the ablation variants.
//!
//! `Mixer` and `MixerMem` are ablation baselines built on the smallest
//! reading of their description (one position table, one depth-`multimodal`
//! stack); they are not meant as faithful reproductions.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{Init, TOKEN_STD};
use crate::mixer::{default_token_hidden, Linear, MixerStack};
use crate::mru::{ClipFeatures, ClipVars, Mru, StepFlags};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionVariant {
    /// All clips' tokens in one flat Mixer.
    Mixer,
    /// Per-clip Mixer with a threaded memory token, no bottlenecks.
    MixerMem,
    /// Forward MRU sweep.
    Mru,
    /// Forward and backward MRU sweeps, averaged.
    #[serde(rename = "mru-bid")]
    MruBiD,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 4] = [
        FusionVariant::Mixer,
        FusionVariant::MixerMem,
        FusionVariant::Mru,
        FusionVariant::MruBiD,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FusionVariant::Mixer => "Mixer",
            FusionVariant::MixerMem => "Mixer+MEM",
            FusionVariant::Mru => "MRU",
            FusionVariant::MruBiD => "MRU+Bi-D",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringTokenMode {
    ClsOnly,
    MemOnly,
    Both,
}

impl ScoringTokenMode {
    pub const ALL: [ScoringTokenMode; 3] = [
        ScoringTokenMode::ClsOnly,
        ScoringTokenMode::MemOnly,
        ScoringTokenMode::Both,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ScoringTokenMode::ClsOnly => "[CLS]",
            ScoringTokenMode::MemOnly => "[MEM]",
            ScoringTokenMode::Both => "[CLS]+[MEM]",
        }
    }

    pub fn head_width(self, channels: usize) -> usize {
        match self {
            ScoringTokenMode::Both => 2 * channels,
            _ => channels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixerDepths {
    pub audio: usize,
    pub video: usize,
    pub multimodal: usize,
    pub memory: usize,
    pub cls: usize,
}

impl Default for MixerDepths {
    fn default() -> Self {
        MixerDepths {
            audio: 1,
            video: 1,
            multimodal: 2,
            memory: 1,
            cls: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub audio_tokens: usize,
    pub video_tokens: usize,
    /// Longest supported video, in clips.
    #[serde(default = "default_max_clips")]
    pub max_clips: usize,
    pub heads: usize,
    #[serde(default = "default_variant")]
    pub variant: FusionVariant,
    #[serde(default = "default_scoring")]
    pub scoring: ScoringTokenMode,
    #[serde(default)]
    pub depths: MixerDepths,
    #[serde(default = "default_ratio")]
    pub bottleneck_ratio: usize,
    /// Token-mixing hidden width for every stack; `max(S, 4)` when unset.
    #[serde(default)]
    pub token_hidden: Option<usize>,
    #[serde(default = "default_ratio")]
    pub channel_expansion: usize,
    /// Score names; defaults depend on `heads`.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

fn default_max_clips() -> usize {
    128
}
fn default_variant() -> FusionVariant {
    FusionVariant::MruBiD
}
fn default_scoring() -> ScoringTokenMode {
    ScoringTokenMode::Both
}
fn default_ratio() -> usize {
    4
}

impl ModelConfig {
    /// Small MruBiD configuration with default depths.
    pub fn toy(channels: usize, audio_tokens: usize, video_tokens: usize, max_clips: usize, heads: usize) -> Self {
        ModelConfig {
            channels,
            audio_tokens,
            video_tokens,
            max_clips,
            heads,
            variant: FusionVariant::MruBiD,
            scoring: ScoringTokenMode::Both,
            depths: MixerDepths::default(),
            bottleneck_ratio: 4,
            token_hidden: None,
            channel_expansion: 4,
            labels: None,
        }
    }

    /// Full-size configuration: 512 channels, 15 video tokens.
    pub fn paper_scale(audio_tokens: usize, heads: usize) -> Self {
        ModelConfig::toy(512, audio_tokens, 15, 128, heads)
    }

    pub fn with_variant(mut self, variant: FusionVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_scoring(mut self, scoring: ScoringTokenMode) -> Self {
        self.scoring = scoring;
        self
    }

    pub fn channel_hidden(&self) -> usize {
        self.channels * self.channel_expansion
    }

    pub fn token_hidden_for(&self, tokens: usize) -> usize {
        self.token_hidden.unwrap_or_else(|| default_token_hidden(tokens))
    }

    /// Scoring mode actually used: the flat Mixer only has a `[CLS]` token.
    pub fn effective_scoring(&self) -> ScoringTokenMode {
        match self.variant {
            FusionVariant::Mixer => ScoringTokenMode::ClsOnly,
            _ => self.scoring,
        }
    }

    /// Tokens the flat Mixer is bound to: `1 + max_clips·(S_a+S_v)`.
    pub fn flat_tokens(&self) -> usize {
        1 + self.max_clips * (self.audio_tokens + self.video_tokens)
    }

    /// Tokens of the per-clip Mixer in `MixerMem`: `2 + S_a + S_v`.
    pub fn clip_tokens(&self) -> usize {
        2 + self.audio_tokens + self.video_tokens
    }

    pub fn head_labels(&self) -> Vec<String> {
        if let Some(l) = &self.labels {
            return l.clone();
        }
        let named: &[&str] = match self.heads {
            1 => &["TES"],
            2 => &["TES", "PCS"],
            7 => &["TES", "PCS", "SS", "TR", "PE", "CO", "IN"],
            _ => &[],
        };
        if named.is_empty() {
            (0..self.heads).map(|i| format!("score{i}")).collect()
        } else {
            named.iter().map(|s| s.to_string()).collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("audio_tokens", self.audio_tokens),
            ("video_tokens", self.video_tokens),
            ("max_clips", self.max_clips),
            ("heads", self.heads),
            ("bottleneck_ratio", self.bottleneck_ratio),
            ("channel_expansion", self.channel_expansion),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.token_hidden == Some(0) {
            return Err(Error::config("token_hidden must be positive"));
        }
        if self.channels % self.bottleneck_ratio != 0 {
            return Err(Error::config(format!(
                "channels {} not divisible by bottleneck_ratio {}",
                self.channels, self.bottleneck_ratio
            )));
        }
        if let Some(l) = &self.labels {
            if l.len() != self.heads {
                return Err(Error::config(format!("{} labels for {} heads", l.len(), self.heads)));
            }
        }
        Ok(())
    }
}

/// K named scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl ScoreVector {
    pub fn new(labels: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if labels.len() != values.len() {
            return Err(Error::Input(format!("{} labels for {} scores", labels.len(), values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "score" });
        }
        Ok(ScoreVector { labels, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Test and diagnostic switches for a forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardHooks {
    /// Bottleneck outputs replaced with zeros.
    pub zero_bottleneck: bool,
    /// No information crosses clips inside the recurrence: bottlenecks are
    /// zeroed and every step starts from the initial memory.
    pub isolate_clips: bool,
    /// `MruBiD` only: skip the backward sweep and the averaging.
    pub drop_backward: bool,
}

impl ForwardHooks {
    pub const NONE: ForwardHooks = ForwardHooks {
        zero_bottleneck: false,
        isolate_clips: false,
        drop_backward: false,
    };

    pub fn isolated() -> Self {
        ForwardHooks {
            isolate_clips: true,
            ..Self::NONE
        }
    }
}

/// Per-clip Mixer used by `MixerMem`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipMixer {
    pub pe: ParamId,
    pub stack: MixerStack,
    pub cls_token: ParamId,
    pub initial_memory: ParamId,
}

/// Single Mixer over every clip's tokens, used by `Mixer`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatMixer {
    pub pe: ParamId,
    pub stack: MixerStack,
    pub cls_token: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkatingMixer {
    config: ModelConfig,
    pub mru: Option<Mru>,
    pub clip_mixer: Option<ClipMixer>,
    pub flat_mixer: Option<FlatMixer>,
    /// `[T_max×C]`
    pub pe_cls: Option<ParamId>,
    pub cls_mixer: Option<MixerStack>,
    /// Weight `[K×W]`, bias `[1×K]`.
    pub head: Linear,
}

impl SkatingMixer {
    /// Registers every parameter of the configured variant in `store`.
    pub fn build(config: &ModelConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let mut init = Init::new(seed);
        let c = cfg.channels;
        let ch = cfg.channel_hidden();
        let mut model = SkatingMixer {
            config: cfg.clone(),
            mru: None,
            clip_mixer: None,
            flat_mixer: None,
            pe_cls: None,
            cls_mixer: None,
            head: Linear {
                weight: ParamId(0),
                bias: ParamId(0),
            },
        };
        match cfg.variant {
            FusionVariant::Mru | FusionVariant::MruBiD => {
                model.mru = Some(Mru::build(store, &mut init, "mru", &cfg)?);
            }
            FusionVariant::MixerMem => {
                let s = cfg.clip_tokens();
                model.clip_mixer = Some(ClipMixer {
                    pe: store.register("clip_mixer.pe", init.normal(&[s, c], TOKEN_STD))?,
                    stack: MixerStack::build(store, &mut init, "clip_mixer.stack", cfg.depths.multimodal, s, c, cfg.token_hidden_for(s), ch)?,
                    cls_token: store.register("clip_mixer.cls_token", init.normal(&[1, c], TOKEN_STD))?,
                    initial_memory: store.register("clip_mixer.initial_memory", init.normal(&[1, c], TOKEN_STD))?,
                });
            }
            FusionVariant::Mixer => {
                let s = cfg.flat_tokens();
                model.flat_mixer = Some(FlatMixer {
                    pe: store.register("flat_mixer.pe", init.normal(&[s, c], TOKEN_STD))?,
                    stack: MixerStack::build(store, &mut init, "flat_mixer.stack", cfg.depths.multimodal, s, c, cfg.token_hidden_for(s), ch)?,
                    cls_token: store.register("flat_mixer.cls_token", init.normal(&[1, c], TOKEN_STD))?,
                });
            }
        }
        if cfg.variant != FusionVariant::Mixer {
            let t = cfg.max_clips;
            model.pe_cls = Some(store.register("pe_cls", init.normal(&[t, c], TOKEN_STD))?);
            model.cls_mixer = Some(MixerStack::build(store, &mut init, "cls_mixer", cfg.depths.cls, t, c, cfg.token_hidden_for(t), ch)?);
        }
        let width = cfg.effective_scoring().head_width(c);
        model.head = Linear {
            weight: store.register("head.weight", init.linear(cfg.heads, width))?,
            bias: store.register("head.bias", Tensor::zeros(&[1, cfg.heads]))?,
        };
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> FusionVariant {
        self.config.variant
    }

    pub fn scoring(&self) -> ScoringTokenMode {
        self.config.effective_scoring()
    }

    pub fn head_width(&self) -> usize {
        self.scoring().head_width(self.config.channels)
    }

    fn check_clips(&self, clips: &[ClipFeatures]) -> Result<()> {
        if clips.is_empty() {
            return Err(Error::Input("empty clip list".into()));
        }
        if clips.len() > self.config.max_clips {
            return Err(Error::config(format!(
                "{} clips exceed max_clips {}",
                clips.len(),
                self.config.max_clips
            )));
        }
        let c = self.config.channels;
        for clip in clips {
            if clip.audio().shape() != [self.config.audio_tokens, c] {
                return Err(Error::shape("clip audio", &[self.config.audio_tokens, c], clip.audio().shape()));
            }
            if clip.video().shape() != [self.config.video_tokens, c] {
                return Err(Error::shape("clip video", &[self.config.video_tokens, c], clip.video().shape()));
            }
        }
        Ok(())
    }

    pub fn record_clips(&self, tape: &mut Tape, clips: &[ClipFeatures]) -> Result<Vec<ClipVars>> {
        self.check_clips(clips)?;
        clips
            .iter()
            .map(|c| {
                Ok(ClipVars {
                    audio: tape.input(c.audio().clone())?,
                    video: tape.input(c.video().clone())?,
                })
            })
            .collect()
    }

    fn require_mru(&self) -> Result<&Mru> {
        self.mru
            .as_ref()
            .ok_or_else(|| Error::config(format!("variant {} has no MRU", self.variant().label())))
    }

    /// One MRU sweep. Returns the `[CLS]` outputs indexed by original clip
    /// position and the final memory.
    pub fn run_direction(&self, tape: &mut Tape, clips: &[ClipVars], back: bool, hooks: ForwardHooks) -> Result<(Vec<Var>, Var)> {
        let mru = self.require_mru()?;
        if clips.is_empty() {
            return Err(Error::Input("empty clip list".into()));
        }
        let flags = StepFlags {
            back,
            zero_bottleneck: hooks.zero_bottleneck || hooks.isolate_clips,
        };
        let initial = mru.initial_state(tape);
        let mut state = initial;
        let mut cls = vec![None; clips.len()];
        let order: Vec<usize> = if back {
            (0..clips.len()).rev().collect()
        } else {
            (0..clips.len()).collect()
        };
        for t in order {
            let input = if hooks.isolate_clips { initial } else { state };
            let (next, c) = mru.step(tape, input, clips[t], flags)?;
            state = next;
            cls[t] = Some(c);
        }
        let cls = cls.into_iter().map(|c| c.expect("every clip visited")).collect();
        Ok((cls, state.mem))
    }

    fn run_clip_mixer(&self, tape: &mut Tape, clips: &[ClipVars], hooks: ForwardHooks) -> Result<(Vec<Var>, Var)> {
        let cm = self.clip_mixer.as_ref().expect("MixerMem parts");
        let initial = tape.param(cm.initial_memory);
        let mut mem = initial;
        let mut cls_list = Vec::with_capacity(clips.len());
        for clip in clips {
            let input_mem = if hooks.isolate_clips { initial } else { mem };
            let cls = tape.param(cm.cls_token);
            let x = tape.concat(&[input_mem, cls, clip.audio, clip.video], 0)?;
            let pe = tape.param(cm.pe);
            let x = tape.add(x, pe)?;
            let z = cm.stack.forward(tape, x)?;
            mem = tape.slice(z, 0, 0..1)?;
            cls_list.push(tape.slice(z, 0, 1..2)?);
        }
        Ok((cls_list, mem))
    }

    fn head(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let w = tape.param(self.head.weight);
        let wt = tape.transpose(w)?;
        let y = tape.matmul(input, wt)?;
        let b = tape.param(self.head.bias);
        tape.add_broadcast(y, b)
    }

    /// CLS mixer pooling over the collected `[CLS]` tokens plus the head.
    fn aggregate(&self, tape: &mut Tape, cls_list: &[Var], mem: Var) -> Result<Var> {
        let mode = self.scoring();
        let input = if mode == ScoringTokenMode::MemOnly {
            mem
        } else {
            let t = cls_list.len();
            let pe_cls = self.pe_cls.expect("pe_cls");
            let stack = self.cls_mixer.as_ref().expect("cls_mixer");
            let seq = tape.concat(cls_list, 0)?;
            let mut pe = tape.param(pe_cls);
            if t < self.config.max_clips {
                pe = tape.slice(pe, 0, 0..t)?;
            }
            let seq = tape.add(seq, pe)?;
            let mixed = stack.forward_prefix(tape, seq)?;
            let pooled = tape.mean(mixed, 0)?;
            let pooled = tape.reshape(pooled, &[1, self.config.channels])?;
            match mode {
                ScoringTokenMode::Both => tape.concat(&[pooled, mem], 1)?,
                _ => pooled,
            }
        };
        self.head(tape, input)
    }

    /// Forward pass over recorded clips; returns the `[1×K]` score row.
    pub fn forward_recorded(&self, tape: &mut Tape, clips: &[ClipVars], hooks: ForwardHooks) -> Result<Var> {
        if clips.is_empty() {
            return Err(Error::Input("empty clip list".into()));
        }
        if clips.len() > self.config.max_clips {
            return Err(Error::config(format!(
                "{} clips exceed max_clips {}",
                clips.len(),
                self.config.max_clips
            )));
        }
        match self.variant() {
            FusionVariant::Mixer => {
                let fm = self.flat_mixer.as_ref().expect("Mixer parts");
                let mut parts = Vec::with_capacity(1 + 2 * clips.len());
                parts.push(tape.param(fm.cls_token));
                for clip in clips {
                    parts.push(clip.audio);
                    parts.push(clip.video);
                }
                let x = tape.concat(&parts, 0)?;
                let n = tape.shape(x)[0];
                let bound = fm.stack.tokens();
                if n > bound {
                    return Err(Error::config(format!("{n} flat tokens exceed bound {bound}")));
                }
                let mut pe = tape.param(fm.pe);
                if n < bound {
                    pe = tape.slice(pe, 0, 0..n)?;
                }
                let x = tape.add(x, pe)?;
                let z = fm.stack.forward_prefix(tape, x)?;
                let cls = tape.slice(z, 0, 0..1)?;
                self.head(tape, cls)
            }
            FusionVariant::MixerMem => {
                let (cls, mem) = self.run_clip_mixer(tape, clips, hooks)?;
                self.aggregate(tape, &cls, mem)
            }
            FusionVariant::Mru => {
                let (cls, mem) = self.run_direction(tape, clips, false, hooks)?;
                self.aggregate(tape, &cls, mem)
            }
            FusionVariant::MruBiD => {
                let (cls_f, mem_f) = self.run_direction(tape, clips, false, hooks)?;
                if hooks.drop_backward {
                    return self.aggregate(tape, &cls_f, mem_f);
                }
                let (cls_b, mem_b) = self.run_direction(tape, clips, true, hooks)?;
                let mut cls = Vec::with_capacity(cls_f.len());
                for (f, b) in cls_f.into_iter().zip(cls_b) {
                    let s = tape.add(f, b)?;
                    cls.push(tape.scale(s, 0.5)?);
                }
                let m = tape.add(mem_f, mem_b)?;
                let mem = tape.scale(m, 0.5)?;
                self.aggregate(tape, &cls, mem)
            }
        }
    }

    pub fn forward(&self, tape: &mut Tape, clips: &[ClipFeatures], hooks: ForwardHooks) -> Result<Var> {
        let vars = self.record_clips(tape, clips)?;
        self.forward_recorded(tape, &vars, hooks)
    }

    /// Scores one video.
    pub fn score(&self, store: &ParamStore, clips: &[ClipFeatures]) -> Result<ScoreVector> {
        self.score_with(store, clips, ForwardHooks::NONE)
    }

    pub fn score_with(&self, store: &ParamStore, clips: &[ClipFeatures], hooks: ForwardHooks) -> Result<ScoreVector> {
        let mut tape = Tape::new(store);
        let out = self.forward(&mut tape, clips, hooks)?;
        ScoreVector::new(self.config.head_labels(), tape.value(out).data().to_vec())
    }

    /// Per-clip score increments: `delta_t = f(clips[..t]) − f(clips[..t−1])`
    /// with `delta_1 = f(clips[..1])`. Returns one vector of K deltas per clip.
    pub fn incremental_trace(&self, store: &ParamStore, clips: &[ClipFeatures], hooks: ForwardHooks) -> Result<Vec<Vec<f64>>> {
        self.check_clips(clips)?;
        let mut prev = vec![0.0; self.config.heads];
        let mut deltas = Vec::with_capacity(clips.len());
        for t in 1..=clips.len() {
            let s = self.score_with(store, &clips[..t], hooks)?;
            deltas.push(s.values.iter().zip(&prev).map(|(a, b)| a - b).collect());
            prev = s.values;
        }
        Ok(deltas)
    }

    /// Analytic matmul MAC count of one forward pass over `t` clips.
    pub fn macs(&self, t: usize) -> u64 {
        crate::flops::count_macs(&self.config, t).unwrap_or(0)
    }

    /// Zeroes second-layer mixer weights, bottlenecks, learned tokens,
    /// position tables and head weights. The model then emits its head bias.
    pub fn zero_model(&self, store: &mut ParamStore) {
        let mut ids: Vec<ParamId> = vec![self.head.weight];
        let mut stacks: Vec<&MixerStack> = Vec::new();
        if let Some(m) = &self.mru {
            ids.extend(m.audio_bottleneck.params());
            ids.extend(m.video_bottleneck.params());
            ids.extend([m.pe_audio, m.pe_video, m.cls_token, m.initial_memory]);
            stacks.extend([&m.audio_mixer, &m.video_mixer, &m.multimodal_mixer, &m.memory_mixer]);
        }
        if let Some(cm) = &self.clip_mixer {
            ids.extend([cm.pe, cm.cls_token, cm.initial_memory]);
            stacks.push(&cm.stack);
        }
        if let Some(fm) = &self.flat_mixer {
            ids.extend([fm.pe, fm.cls_token]);
            stacks.push(&fm.stack);
        }
        if let Some(pe) = self.pe_cls {
            ids.push(pe);
        }
        if let Some(s) = &self.cls_mixer {
            stacks.push(s);
        }
        for s in stacks {
            ids.extend(s.second_layers());
        }
        for id in ids {
            store.value_mut(id).data_mut().fill(0.0);
        }
    }

    /// Every Mixer block in the model.
    pub fn blocks(&self) -> Vec<&crate::mixer::MixerBlock> {
        let mut stacks: Vec<&MixerStack> = Vec::new();
        if let Some(m) = &self.mru {
            stacks.extend([&m.audio_mixer, &m.video_mixer, &m.multimodal_mixer, &m.memory_mixer]);
        }
        if let Some(cm) = &self.clip_mixer {
            stacks.push(&cm.stack);
        }
        if let Some(fm) = &self.flat_mixer {
            stacks.push(&fm.stack);
        }
        if let Some(s) = &self.cls_mixer {
            stacks.push(s);
        }
        stacks.into_iter().flat_map(|s| s.blocks.iter()).collect()
    }
}
