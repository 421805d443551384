//! MLP-Mixer blocks.
//!
//! For an input `X[S×C]` one block computes
//!
//! ```text
//! U = X + W2·Φ(W1·Norm₁(X))            token mixing, along S for each channel
//! Y = U + Φ(Norm₂(U)·W3ᵀ)·W4ᵀ          channel mixing, along C for each token
//! ```
//!
//! with Φ the exact GELU and both norms over the channel axis. Every linear
//! layer carries a bias, initialized to zero.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::init::Init;
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Default token-mixing hidden width for `tokens` tokens.
pub fn default_token_hidden(tokens: usize) -> usize {
    tokens.max(4)
}

/// A weight matrix and its bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixerBlock {
    tokens: usize,
    channels: usize,
    token_hidden: usize,
    channel_hidden: usize,
    pub norm1_gamma: ParamId,
    pub norm1_beta: ParamId,
    /// `W1[S_hidden×S]`, bias `[S_hidden×1]`.
    pub token_fc1: Linear,
    /// `W2[S×S_hidden]`, bias `[S×1]`.
    pub token_fc2: Linear,
    pub norm2_gamma: ParamId,
    pub norm2_beta: ParamId,
    /// `W3[C_hidden×C]`, bias `[1×C_hidden]`.
    pub channel_fc1: Linear,
    /// `W4[C×C_hidden]`, bias `[1×C]`.
    pub channel_fc2: Linear,
}

impl MixerBlock {
    pub fn build(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        tokens: usize,
        channels: usize,
        token_hidden: usize,
        channel_hidden: usize,
    ) -> Result<Self> {
        if tokens == 0 || channels == 0 || token_hidden == 0 || channel_hidden == 0 {
            return Err(Error::config(format!("mixer `{name}`: zero extent")));
        }
        let mut reg = |suffix: &str, t: Tensor| store.register(format!("{name}.{suffix}"), t);
        let norm1_gamma = reg("norm1.gamma", Tensor::full(&[channels], 1.0))?;
        let norm1_beta = reg("norm1.beta", Tensor::zeros(&[channels]))?;
        let token_fc1 = Linear {
            weight: reg("token_fc1.weight", init.linear(token_hidden, tokens))?,
            bias: reg("token_fc1.bias", Tensor::zeros(&[token_hidden, 1]))?,
        };
        let token_fc2 = Linear {
            weight: reg("token_fc2.weight", init.linear(tokens, token_hidden))?,
            bias: reg("token_fc2.bias", Tensor::zeros(&[tokens, 1]))?,
        };
        let norm2_gamma = reg("norm2.gamma", Tensor::full(&[channels], 1.0))?;
        let norm2_beta = reg("norm2.beta", Tensor::zeros(&[channels]))?;
        let channel_fc1 = Linear {
            weight: reg("channel_fc1.weight", init.linear(channel_hidden, channels))?,
            bias: reg("channel_fc1.bias", Tensor::zeros(&[1, channel_hidden]))?,
        };
        let channel_fc2 = Linear {
            weight: reg("channel_fc2.weight", init.linear(channels, channel_hidden))?,
            bias: reg("channel_fc2.bias", Tensor::zeros(&[1, channels]))?,
        };
        Ok(MixerBlock {
            tokens,
            channels,
            token_hidden,
            channel_hidden,
            norm1_gamma,
            norm1_beta,
            token_fc1,
            token_fc2,
            norm2_gamma,
            norm2_beta,
            channel_fc1,
            channel_fc2,
        })
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn token_hidden(&self) -> usize {
        self.token_hidden
    }

    pub fn channel_hidden(&self) -> usize {
        self.channel_hidden
    }

    /// Applies the block to `X[S×C]` with `S` equal to the bound token count.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s != [self.tokens, self.channels] {
            return Err(Error::shape("mixer_block", &[self.tokens, self.channels], s));
        }
        self.forward_prefix(tape, x)
    }

    /// Applies the block to `X[s×C]` with `s ≤ S`, using the leading `s`
    /// columns of `W1` and the leading `s` rows of `W2` and its bias.
    pub fn forward_prefix(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.channels || shape[0] > self.tokens {
            return Err(Error::shape("mixer_block", &[self.tokens, self.channels], &shape));
        }
        let s = shape[0];

        // token mixing
        let (g1, b1) = (tape.param(self.norm1_gamma), tape.param(self.norm1_beta));
        let n1 = tape.layer_norm(x, g1, b1, LAYER_NORM_EPS)?;
        let mut w1 = tape.param(self.token_fc1.weight);
        let bias1 = tape.param(self.token_fc1.bias);
        let mut w2 = tape.param(self.token_fc2.weight);
        let mut bias2 = tape.param(self.token_fc2.bias);
        if s < self.tokens {
            w1 = tape.slice(w1, 1, 0..s)?;
            w2 = tape.slice(w2, 0, 0..s)?;
            bias2 = tape.slice(bias2, 0, 0..s)?;
        }
        let h = tape.matmul(w1, n1)?;
        let h = tape.add_broadcast(h, bias1)?;
        let h = tape.gelu(h)?;
        let t = tape.matmul(w2, h)?;
        let t = tape.add_broadcast(t, bias2)?;
        let u = tape.add(x, t)?;

        // channel mixing
        let (g2, b2) = (tape.param(self.norm2_gamma), tape.param(self.norm2_beta));
        let n2 = tape.layer_norm(u, g2, b2, LAYER_NORM_EPS)?;
        let w3 = tape.param(self.channel_fc1.weight);
        let w3t = tape.transpose(w3)?;
        let h2 = tape.matmul(n2, w3t)?;
        let bias3 = tape.param(self.channel_fc1.bias);
        let h2 = tape.add_broadcast(h2, bias3)?;
        let h2 = tape.gelu(h2)?;
        let w4 = tape.param(self.channel_fc2.weight);
        let w4t = tape.transpose(w4)?;
        let t2 = tape.matmul(h2, w4t)?;
        let bias4 = tape.param(self.channel_fc2.bias);
        let t2 = tape.add_broadcast(t2, bias4)?;
        tape.add(u, t2)
    }

    /// Matmul MACs for one application to `s` tokens.
    pub fn macs(&self, s: usize) -> u64 {
        let (s, c) = (s as u64, self.channels as u64);
        let token = 2 * self.token_hidden as u64 * s * c;
        let channel = 2 * s * c * self.channel_hidden as u64;
        token + channel
    }

    /// The second linear layer of each MLP (`W2`, `W4`).
    pub fn second_layers(&self) -> [ParamId; 2] {
        [self.token_fc2.weight, self.channel_fc2.weight]
    }
}

/// A sequence of blocks sharing token and channel counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MixerStack {
    tokens: usize,
    channels: usize,
    pub blocks: Vec<MixerBlock>,
}

impl MixerStack {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        depth: usize,
        tokens: usize,
        channels: usize,
        token_hidden: usize,
        channel_hidden: usize,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| {
                let block_name: String = format!("{name}.{i}");
                MixerBlock::build(store, init, &block_name, tokens, channels, token_hidden, channel_hidden)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MixerStack {
            tokens,
            channels,
            blocks,
        })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s != [self.tokens, self.channels] {
            return Err(Error::shape("mixer_stack", &[self.tokens, self.channels], s));
        }
        self.forward_prefix(tape, x)
    }

    pub fn forward_prefix(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.channels || s[0] > self.tokens {
            return Err(Error::shape("mixer_stack", &[self.tokens, self.channels], s));
        }
        self.blocks.iter().try_fold(x, |h, b| b.forward_prefix(tape, h))
    }

    pub fn macs(&self, s: usize) -> u64 {
        self.blocks.iter().map(|b| b.macs(s)).sum()
    }

    pub fn second_layers(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.blocks.iter().flat_map(|b| b.second_layers())
    }
}
