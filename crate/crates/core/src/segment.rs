//! Clip windowing over a frame stream.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipSpec {
    pub fps: u32,
    pub clip_seconds: f64,
    pub overlap_seconds: f64,
}

impl Default for ClipSpec {
    fn default() -> Self {
        ClipSpec {
            fps: 25,
            clip_seconds: 5.0,
            overlap_seconds: 3.0,
        }
    }
}

fn integral_frames(fps: u32, seconds: f64, what: &str) -> Result<usize> {
    let frames = fps as f64 * seconds;
    let rounded = libm::round(frames);
    if (frames - rounded).abs() > 1e-9 || rounded < 0.0 {
        return Err(Error::config(alloc::format!(
            "{what}: {fps} fps × {seconds} s is not a whole number of frames"
        )));
    }
    Ok(rounded as usize)
}

impl ClipSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fps == 0 {
            return Err(Error::config("fps must be positive"));
        }
        if !(self.overlap_seconds >= 0.0 && self.overlap_seconds < self.clip_seconds) {
            return Err(Error::config("overlap must satisfy 0 ≤ overlap < clip"));
        }
        self.clip_frames()?;
        self.stride_frames()?;
        Ok(())
    }

    pub fn clip_frames(&self) -> Result<usize> {
        integral_frames(self.fps, self.clip_seconds, "clip")
    }

    pub fn stride_frames(&self) -> Result<usize> {
        integral_frames(self.fps, self.clip_seconds - self.overlap_seconds, "stride")
    }

    /// Video tokens per clip: whole `segment_frames`-frame segments in one
    /// clip (125 frames at 8 per segment gives 15).
    pub fn video_tokens(&self, segment_frames: usize) -> Result<usize> {
        if segment_frames == 0 {
            return Err(Error::config("segment length must be positive"));
        }
        Ok(self.clip_frames()? / segment_frames)
    }
}

/// Half-open `(start, end)` frame windows at the clip stride. Trailing
/// frames that do not fill a whole window are dropped.
pub fn segment_stream(total_frames: usize, spec: &ClipSpec) -> Result<Vec<(usize, usize)>> {
    spec.validate()?;
    let clip = spec.clip_frames()?;
    let stride = spec.stride_frames()?;
    if total_frames < clip {
        return Err(Error::Input(alloc::format!(
            "stream of {total_frames} frames is shorter than one {clip}-frame clip"
        )));
    }
    Ok((0..=(total_frames - clip) / stride)
        .map(|i| (i * stride, i * stride + clip))
        .collect())
}
