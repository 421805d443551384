//! Analytic multiply-accumulate counts.
//!
//! Counts only matmul MACs, the same quantity [`crate::Tape::macs`] measures
//! while executing.

use crate::error::{Error, Result};
use crate::model::{FusionVariant, ModelConfig, ScoringTokenMode};

/// MACs of `depth` Mixer blocks bound to `bound` tokens, applied to `s`.
fn stack_macs(cfg: &ModelConfig, depth: usize, bound: usize, s: usize) -> u64 {
    let c = cfg.channels as u64;
    let th = cfg.token_hidden_for(bound) as u64;
    let ch = cfg.channel_hidden() as u64;
    let s = s as u64;
    depth as u64 * (2 * th * s * c + 2 * s * c * ch)
}

fn mru_step_macs(cfg: &ModelConfig) -> u64 {
    let c = cfg.channels as u64;
    let bottleneck = 2 * 2 * c * (c / cfg.bottleneck_ratio as u64);
    let (sa, sv) = (cfg.audio_tokens, cfg.video_tokens);
    let fused = 3 + sa + sv;
    bottleneck
        + stack_macs(cfg, cfg.depths.audio, sa + 1, sa + 1)
        + stack_macs(cfg, cfg.depths.video, sv + 1, sv + 1)
        + stack_macs(cfg, cfg.depths.multimodal, fused, fused)
        + stack_macs(cfg, cfg.depths.memory, 2, 2)
}

fn aggregate_macs(cfg: &ModelConfig, t: usize) -> u64 {
    let mode = cfg.effective_scoring();
    let cls = if mode == ScoringTokenMode::MemOnly {
        0
    } else {
        stack_macs(cfg, cfg.depths.cls, cfg.max_clips, t)
    };
    cls + (cfg.heads * mode.head_width(cfg.channels)) as u64
}

/// Matmul MACs of one forward pass of `cfg` over `t` clips.
pub fn count_macs(cfg: &ModelConfig, t: usize) -> Result<u64> {
    cfg.validate()?;
    if t == 0 || t > cfg.max_clips {
        return Err(Error::config(alloc::format!(
            "clip count {t} outside 1..={}",
            cfg.max_clips
        )));
    }
    let t64 = t as u64;
    Ok(match cfg.variant {
        FusionVariant::Mixer => {
            let n = 1 + t * (cfg.audio_tokens + cfg.video_tokens);
            stack_macs(cfg, cfg.depths.multimodal, cfg.flat_tokens(), n)
                + (cfg.heads * cfg.channels) as u64
        }
        FusionVariant::MixerMem => {
            let s = cfg.clip_tokens();
            t64 * stack_macs(cfg, cfg.depths.multimodal, s, s) + aggregate_macs(cfg, t)
        }
        FusionVariant::Mru => t64 * mru_step_macs(cfg) + aggregate_macs(cfg, t),
        FusionVariant::MruBiD => 2 * t64 * mru_step_macs(cfg) + aggregate_macs(cfg, t),
    })
}

/// MAC counts of models sized for exactly `t` clips (`max_clips = t`), for
/// each `t` in `sweep`.
pub fn sweep_sized(cfg: &ModelConfig, sweep: &[usize]) -> Result<alloc::vec::Vec<(usize, u64)>> {
    sweep
        .iter()
        .map(|&t| {
            let mut c = cfg.clone();
            c.max_clips = t;
            Ok((t, count_macs(&c, t)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_clip_counts() {
        let cfg = ModelConfig::toy(8, 2, 2, 4, 2);
        assert!(count_macs(&cfg, 0).is_err());
        assert!(count_macs(&cfg, 5).is_err());
        assert!(count_macs(&cfg, 4).is_ok());
    }
}
