use serde::{Deserialize, Serialize};

use super::{FrameClip, Mask};
use crate::{CofError, Result};

pub const MID_GRAY: f64 = 0.5;

/// How reasoning frames highlight the edit region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningFormat {
    /// Gray overlay whose opacity grows `k / K` over the clip.
    ProgressiveGray,
    /// Gray overlay at a fixed 50% opacity.
    StaticGray,
    /// Red overlay at 50% opacity.
    Red,
    /// Everything outside the edit region blacked out.
    BlackBg,
    /// Gray overlay with an explicit per-frame opacity schedule.
    Schedule(Vec<f64>),
}

impl ReasoningFormat {
    pub fn name(&self) -> &'static str {
        match self {
            ReasoningFormat::ProgressiveGray => "progressive_gray",
            ReasoningFormat::StaticGray => "static_gray",
            ReasoningFormat::Red => "red",
            ReasoningFormat::BlackBg => "black_bg",
            ReasoningFormat::Schedule(_) => "schedule",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "progressive_gray" => ReasoningFormat::ProgressiveGray,
            "static_gray" => ReasoningFormat::StaticGray,
            "red" => ReasoningFormat::Red,
            "black_bg" => ReasoningFormat::BlackBg,
            _ => return Err(CofError::Invalid(format!("unknown reasoning format {s:?}"))),
        })
    }

    /// Per-frame opacity for a clip of `k` frames.
    pub fn alphas(&self, k: usize) -> Result<Vec<f64>> {
        match self {
            ReasoningFormat::ProgressiveGray => Ok((0..k).map(|i| i as f64 / k as f64).collect()),
            ReasoningFormat::StaticGray | ReasoningFormat::Red => Ok(vec![0.5; k]),
            ReasoningFormat::BlackBg => Ok(vec![1.0; k]),
            ReasoningFormat::Schedule(a) => {
                if a.len() != k {
                    return Err(CofError::Invalid(format!(
                        "schedule has {} entries for {k} reasoning frames",
                        a.len()
                    )));
                }
                if let Some(bad) = a.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(CofError::Invalid(format!("opacity {bad} outside [0, 1]")));
                }
                Ok(a.clone())
            }
        }
    }
}

/// Which clip the reasoning overlay is drawn on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningBase {
    #[default]
    Source,
    Target,
}

/// Overlays the highlight on every frame of `base`.
pub fn render_reasoning(base: &FrameClip, mask: &Mask, format: &ReasoningFormat) -> Result<FrameClip> {
    if mask.height() != base.height() || mask.width() != base.width() {
        return Err(CofError::Shape(format!(
            "{}x{} mask over {}x{} frames",
            mask.height(),
            mask.width(),
            base.height(),
            base.width()
        )));
    }
    let alphas = format.alphas(base.frames())?;
    let mut out = base.clone();
    for (f, &a) in alphas.iter().enumerate() {
        for y in 0..base.height() {
            for x in 0..base.width() {
                let inside = mask.get(y, x);
                let p = base.pixel(f, y, x);
                let blended = match format {
                    ReasoningFormat::BlackBg if inside => continue,
                    ReasoningFormat::BlackBg => p.map(|v| (1.0 - a) * v),
                    _ if !inside => continue,
                    ReasoningFormat::Red => {
                        let red = [1.0, 0.0, 0.0];
                        [0, 1, 2].map(|c| (1.0 - a) * p[c] + a * red[c])
                    }
                    _ => p.map(|v| (1.0 - a) * v + a * MID_GRAY),
                };
                out.set_pixel(f, y, x, blended);
            }
        }
    }
    Ok(out)
}
