//! Lossless space-to-depth stand-in for a causal video autoencoder.
//!
//! Frames are grouped `ct` at a time with the first group ending at the
//! remainder frame, so `L = (F - 1) / ct + 1` for every `F`. When `ct`
//! divides `F - 1` the first group holds frame 0 alone, padded by repetition.
//! Within a group, slot `s`, channel `c` and patch offset `(dy, dx)` map to
//! latent channel `((s * 3 + c) * p + dy) * p + dx`.

use cof_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::worlds::FrameClip;
use crate::{CofError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub patch: usize,
    pub temporal: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { patch: 4, temporal: 1 }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.temporal == 0 {
            return Err(CofError::Codec("patch and temporal factor must be positive".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        3 * self.patch * self.patch * self.temporal
    }

    /// Checks the divisibility rules for a source or target clip.
    pub fn check_video_frames(&self, frames: usize) -> Result<()> {
        if frames == 0 || !(frames - 1).is_multiple_of(self.temporal) {
            return Err(CofError::Codec(format!(
                "{frames} frames: F - 1 must be divisible by {}",
                self.temporal
            )));
        }
        Ok(())
    }

    /// Pixel frame held by `slot` of latent frame `group` in an `frames`-frame clip.
    fn source_frame(&self, frames: usize, group: usize, slot: usize) -> usize {
        let r = (frames - 1) % self.temporal;
        if group == 0 {
            slot.saturating_sub(self.temporal - 1 - r)
        } else {
            r + (group - 1) * self.temporal + 1 + slot
        }
    }
}

pub fn latent_len(frames: usize, ct: usize) -> usize {
    (frames - 1) / ct + 1
}

/// Encoded segment: `L × C × h × w` values plus the pixel frame count needed
/// to invert the grouping.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentClip {
    pub values: Tensor,
    pub pixel_frames: usize,
}

impl LatentClip {
    pub fn new(values: Tensor, pixel_frames: usize) -> Result<Self> {
        if values.rank() != 4 {
            return Err(CofError::Shape(format!("latent of shape {:?}", values.shape())));
        }
        Ok(Self { values, pixel_frames })
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.values.shape()[2], self.values.shape()[3])
    }
}

pub fn encode(clip: &FrameClip, cfg: &CodecConfig) -> Result<LatentClip> {
    cfg.validate()?;
    let (f, hh, ww, p, ct) = (clip.frames(), clip.height(), clip.width(), cfg.patch, cfg.temporal);
    if hh % p != 0 || ww % p != 0 {
        return Err(CofError::Codec(format!("{hh}x{ww} frames with patch {p}")));
    }
    let (l, c, h, w) = (latent_len(f, ct), cfg.channels(), hh / p, ww / p);
    let mut out = vec![0.0; l * c * h * w];
    let px = clip.pixels();
    for g in 0..l {
        for s in 0..ct {
            let frame = cfg.source_frame(f, g, s);
            for ch in 0..3 {
                for dy in 0..p {
                    for dx in 0..p {
                        let lc = ((s * 3 + ch) * p + dy) * p + dx;
                        for by in 0..h {
                            for bx in 0..w {
                                let (y, x) = (by * p + dy, bx * p + dx);
                                out[((g * c + lc) * h + by) * w + bx] = px[((frame * hh + y) * ww + x) * 3 + ch];
                            }
                        }
                    }
                }
            }
        }
    }
    LatentClip::new(Tensor::new([l, c, h, w], out)?, f)
}

/// Inverse of [`encode`]. Values outside `[0, 1]` are rejected; model
/// outputs go through [`decode_quantized`] instead.
pub fn decode(z: &LatentClip, cfg: &CodecConfig) -> Result<FrameClip> {
    let (f, h, w, px) = decode_raw(z, cfg)?;
    FrameClip::new(f, h, w, px)
}

/// Decodes, clamps to `[0, 1]` and snaps to the 8-bit grid.
pub fn decode_quantized(z: &LatentClip, cfg: &CodecConfig) -> Result<FrameClip> {
    let (f, h, w, px) = decode_raw(z, cfg)?;
    FrameClip::quantized_from(f, h, w, &px)
}

fn decode_raw(z: &LatentClip, cfg: &CodecConfig) -> Result<(usize, usize, usize, Vec<f64>)> {
    cfg.validate()?;
    let (p, ct, f) = (cfg.patch, cfg.temporal, z.pixel_frames);
    let (l, c, h, w) = (z.frames(), z.channels(), z.grid().0, z.grid().1);
    if c != cfg.channels() || f == 0 || l != latent_len(f, ct) {
        return Err(CofError::Shape(format!(
            "latent {:?} for {f} frames under {cfg:?}",
            z.values.shape()
        )));
    }
    let (hh, ww) = (h * p, w * p);
    let mut px = vec![0.0; f * hh * ww * 3];
    let src = z.values.data();
    let r = (f - 1) % ct;
    for g in 0..l {
        // Padding duplicates of frame 0 come first; read each frame once.
        let first = if g == 0 { ct - 1 - r } else { 0 };
        for s in first..ct {
            let frame = cfg.source_frame(f, g, s);
            for ch in 0..3 {
                for dy in 0..p {
                    for dx in 0..p {
                        let lc = ((s * 3 + ch) * p + dy) * p + dx;
                        for by in 0..h {
                            for bx in 0..w {
                                let (y, x) = (by * p + dy, bx * p + dx);
                                px[((frame * hh + y) * ww + x) * 3 + ch] = src[((g * c + lc) * h + by) * w + bx];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((f, hh, ww, px))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_lengths() {
        assert_eq!(latent_len(33, 4), 9);
        assert_eq!(latent_len(4, 4), 1);
        assert_eq!(latent_len(1, 4), 1);
        assert_eq!(latent_len(9, 1), 9);
    }

    #[test]
    fn first_group_pads_frame_zero() {
        let cfg = CodecConfig { patch: 2, temporal: 4 };
        assert_eq!(
            (0..4).map(|s| cfg.source_frame(9, 0, s)).collect::<Vec<_>>(),
            [0, 0, 0, 0]
        );
        assert_eq!(
            (0..4).map(|s| cfg.source_frame(9, 1, s)).collect::<Vec<_>>(),
            [1, 2, 3, 4]
        );
        assert_eq!(
            (0..4).map(|s| cfg.source_frame(4, 0, s)).collect::<Vec<_>>(),
            [0, 1, 2, 3]
        );
        assert_eq!(
            (0..4).map(|s| cfg.source_frame(6, 0, s)).collect::<Vec<_>>(),
            [0, 0, 0, 1]
        );
    }

    #[test]
    fn video_divisibility() {
        let cfg = CodecConfig { patch: 4, temporal: 4 };
        assert!(cfg.check_video_frames(33).is_ok());
        assert!(cfg.check_video_frames(8).is_err());
    }
}
