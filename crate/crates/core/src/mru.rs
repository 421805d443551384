//! The memory recurrent unit: one clip step of memory-conditioned fusion.
//!
//! Per clip, the incoming `[MEM]` token is projected by two bottlenecks into
//! one extra audio token and one extra video token. Each is joined to its
//! modality's tokens (memory token first going forward, last going
//! backward), position tables are added, and the modality mixers run. A
//! fresh `[CLS]` token is prepended to both outputs and the multimodal mixer
//! fuses them; its row 0 is the clip representation. Finally `(MEM, CLS)`
//! pass through the memory mixer and row 0 becomes the next memory.

use alloc::format;

use crate::error::{Error, Result};
use crate::init::{Init, TOKEN_STD};
use crate::mixer::{default_token_hidden, Linear, MixerStack};
use crate::model::ModelConfig;
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Audio and video tokens of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatures {
    audio: Tensor,
    video: Tensor,
}

impl ClipFeatures {
    pub fn new(audio: Tensor, video: Tensor) -> Result<Self> {
        if !audio.is_2d() || !video.is_2d() {
            return Err(Error::dim("clip", "audio and video must be 2-D token matrices"));
        }
        if audio.cols() != video.cols() {
            return Err(Error::shape("clip", audio.shape(), video.shape()));
        }
        Ok(ClipFeatures { audio, video })
    }

    pub fn audio(&self) -> &Tensor {
        &self.audio
    }

    pub fn video(&self) -> &Tensor {
        &self.video
    }

    pub fn audio_mut(&mut self) -> &mut Tensor {
        &mut self.audio
    }

    pub fn video_mut(&mut self) -> &mut Tensor {
        &mut self.video
    }

    pub fn channels(&self) -> usize {
        self.audio.cols()
    }

    pub fn audio_tokens(&self) -> usize {
        self.audio.rows()
    }

    pub fn video_tokens(&self) -> usize {
        self.video.rows()
    }
}

/// A clip already recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ClipVars {
    pub audio: Var,
    pub video: Var,
}

/// `C → C/r → C` projection with GELU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck {
    pub down: Linear,
    pub up: Linear,
    channels: usize,
    hidden: usize,
}

impl Bottleneck {
    pub fn build(store: &mut ParamStore, init: &mut Init, name: &str, channels: usize, ratio: usize) -> Result<Self> {
        if ratio == 0 || channels % ratio != 0 {
            return Err(Error::config(format!(
                "bottleneck `{name}`: channels {channels} not divisible by ratio {ratio}"
            )));
        }
        let hidden = channels / ratio;
        let down = Linear {
            weight: store.register(format!("{name}.down.weight"), init.linear(hidden, channels))?,
            bias: store.register(format!("{name}.down.bias"), Tensor::zeros(&[1, hidden]))?,
        };
        let up = Linear {
            weight: store.register(format!("{name}.up.weight"), init.linear(channels, hidden))?,
            bias: store.register(format!("{name}.up.bias"), Tensor::zeros(&[1, channels]))?,
        };
        Ok(Bottleneck {
            down,
            up,
            channels,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `up(Φ(down(mem)))` for `mem[1×C]`.
    pub fn forward(&self, tape: &mut Tape, mem: Var) -> Result<Var> {
        if tape.shape(mem) != [1, self.channels] {
            return Err(Error::shape("bottleneck", &[1, self.channels], tape.shape(mem)));
        }
        let wd = tape.param(self.down.weight);
        let wd = tape.transpose(wd)?;
        let h = tape.matmul(mem, wd)?;
        let bd = tape.param(self.down.bias);
        let h = tape.add_broadcast(h, bd)?;
        let h = tape.gelu(h)?;
        let wu = tape.param(self.up.weight);
        let wu = tape.transpose(wu)?;
        let o = tape.matmul(h, wu)?;
        let bu = tape.param(self.up.bias);
        tape.add_broadcast(o, bu)
    }

    pub fn macs(&self) -> u64 {
        2 * (self.channels * self.hidden) as u64
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.down.weight, self.down.bias, self.up.weight, self.up.bias]
    }
}

/// The recurrent state between clips: the `[MEM]` token on a tape.
#[derive(Debug, Clone, Copy)]
pub struct MruState {
    pub mem: Var,
}

/// Switches for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepFlags {
    /// Backward sweep: memory-derived token goes after the clip tokens.
    pub back: bool,
    /// Replace both bottleneck outputs with zeros.
    pub zero_bottleneck: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mru {
    channels: usize,
    audio_tokens: usize,
    video_tokens: usize,
    pub audio_bottleneck: Bottleneck,
    pub video_bottleneck: Bottleneck,
    /// `[(S_a+1)×C]`
    pub pe_audio: ParamId,
    /// `[(S_v+1)×C]`
    pub pe_video: ParamId,
    pub audio_mixer: MixerStack,
    pub video_mixer: MixerStack,
    pub multimodal_mixer: MixerStack,
    pub memory_mixer: MixerStack,
    pub cls_token: ParamId,
    pub initial_memory: ParamId,
}

impl Mru {
    pub fn build(store: &mut ParamStore, init: &mut Init, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.channels;
        let (sa, sv) = (cfg.audio_tokens, cfg.video_tokens);
        let ch = cfg.channel_hidden();
        let th = |s: usize| cfg.token_hidden.unwrap_or_else(|| default_token_hidden(s));
        let audio_bottleneck = Bottleneck::build(store, init, &format!("{name}.audio_bottleneck"), c, cfg.bottleneck_ratio)?;
        let video_bottleneck = Bottleneck::build(store, init, &format!("{name}.video_bottleneck"), c, cfg.bottleneck_ratio)?;
        let pe_audio = store.register(format!("{name}.pe_audio"), init.normal(&[sa + 1, c], TOKEN_STD))?;
        let pe_video = store.register(format!("{name}.pe_video"), init.normal(&[sv + 1, c], TOKEN_STD))?;
        let d = &cfg.depths;
        let audio_mixer = MixerStack::build(store, init, &format!("{name}.audio_mixer"), d.audio, sa + 1, c, th(sa + 1), ch)?;
        let video_mixer = MixerStack::build(store, init, &format!("{name}.video_mixer"), d.video, sv + 1, c, th(sv + 1), ch)?;
        let fused = 1 + (sa + 1) + (sv + 1);
        let multimodal_mixer =
            MixerStack::build(store, init, &format!("{name}.multimodal_mixer"), d.multimodal, fused, c, th(fused), ch)?;
        let memory_mixer = MixerStack::build(store, init, &format!("{name}.memory_mixer"), d.memory, 2, c, th(2), ch)?;
        let cls_token = store.register(format!("{name}.cls_token"), init.normal(&[1, c], TOKEN_STD))?;
        let initial_memory = store.register(format!("{name}.initial_memory"), init.normal(&[1, c], TOKEN_STD))?;
        Ok(Mru {
            channels: c,
            audio_tokens: sa,
            video_tokens: sv,
            audio_bottleneck,
            video_bottleneck,
            pe_audio,
            pe_video,
            audio_mixer,
            video_mixer,
            multimodal_mixer,
            memory_mixer,
            cls_token,
            initial_memory,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn initial_state(&self, tape: &mut Tape) -> MruState {
        MruState {
            mem: tape.param(self.initial_memory),
        }
    }

    /// Records a clip on the tape after checking it against the bound sizes.
    pub fn record_clip(&self, tape: &mut Tape, clip: &ClipFeatures) -> Result<ClipVars> {
        if clip.audio.shape() != [self.audio_tokens, self.channels] {
            return Err(Error::shape("mru_step audio", &[self.audio_tokens, self.channels], clip.audio.shape()));
        }
        if clip.video.shape() != [self.video_tokens, self.channels] {
            return Err(Error::shape("mru_step video", &[self.video_tokens, self.channels], clip.video.shape()));
        }
        Ok(ClipVars {
            audio: tape.input(clip.audio.clone())?,
            video: tape.input(clip.video.clone())?,
        })
    }

    /// One clip step. Returns the new state and the clip's `[CLS]` output,
    /// both `[1×C]`.
    pub fn step(&self, tape: &mut Tape, state: MruState, clip: ClipVars, flags: StepFlags) -> Result<(MruState, Var)> {
        let mem = state.mem;
        let (a_prev, v_prev) = if flags.zero_bottleneck {
            let z = Tensor::zeros(&[1, self.channels]);
            (tape.input(z.clone())?, tape.input(z)?)
        } else {
            (
                self.audio_bottleneck.forward(tape, mem)?,
                self.video_bottleneck.forward(tape, mem)?,
            )
        };
        let join = |tape: &mut Tape, prev: Var, feats: Var| {
            if flags.back {
                tape.concat(&[feats, prev], 0)
            } else {
                tape.concat(&[prev, feats], 0)
            }
        };
        let audio = join(tape, a_prev, clip.audio)?;
        let pe_a = tape.param(self.pe_audio);
        let audio = tape.add(audio, pe_a)?;
        let video = join(tape, v_prev, clip.video)?;
        let pe_v = tape.param(self.pe_video);
        let video = tape.add(video, pe_v)?;

        let audio = self.audio_mixer.forward(tape, audio)?;
        let video = self.video_mixer.forward(tape, video)?;

        let cls = tape.param(self.cls_token);
        let fused = tape.concat(&[cls, audio, video], 0)?;
        let fused = self.multimodal_mixer.forward(tape, fused)?;
        let cls_out = tape.slice(fused, 0, 0..1)?;

        let q = tape.concat(&[mem, cls_out], 0)?;
        let q = self.memory_mixer.forward(tape, q)?;
        let new_mem = tape.slice(q, 0, 0..1)?;
        Ok((MruState { mem: new_mem }, cls_out))
    }

    /// Matmul MACs of one step.
    pub fn step_macs(&self, zero_bottleneck: bool) -> u64 {
        let bottleneck = if zero_bottleneck {
            0
        } else {
            self.audio_bottleneck.macs() + self.video_bottleneck.macs()
        };
        bottleneck
            + self.audio_mixer.macs(self.audio_tokens + 1)
            + self.video_mixer.macs(self.video_tokens + 1)
            + self.multimodal_mixer.macs(self.multimodal_mixer.tokens())
            + self.memory_mixer.macs(2)
    }
}
