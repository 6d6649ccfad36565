use serde::{Deserialize, Serialize};

use crate::worlds::{EditTriplet, FrameClip, Mask};
use crate::{CofError, Result};

pub const TAU_EDIT: f64 = 0.08;
pub const TAU_PRES: f64 = 0.03;
/// Per-pixel deviation that counts as highlighted in a predicted reasoning frame.
pub const REASONING_THRESHOLD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub edit: f64,
    pub preservation: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            edit: TAU_EDIT,
            preservation: TAU_PRES,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditMetrics {
    pub edit_region_mae: f64,
    pub preservation_mae: f64,
    pub success: bool,
}

pub fn is_success(edit_mae: f64, pres_mae: f64, th: &Thresholds) -> bool {
    edit_mae < th.edit && pres_mae < th.preservation
}

/// Mean absolute error against the target inside the mask and against the
/// source outside it, over all frames and channels.
pub fn edit_metrics(output: &FrameClip, triplet: &EditTriplet, th: &Thresholds) -> Result<EditMetrics> {
    if !output.same_geometry(&triplet.target) {
        return Err(CofError::Shape(format!(
            "output {}x{}x{} vs target {}x{}x{}",
            output.frames(),
            output.height(),
            output.width(),
            triplet.target.frames(),
            triplet.target.height(),
            triplet.target.width()
        )));
    }
    let mask = &triplet.edit_mask;
    let plane = output.height() * output.width();
    let (mut edit, mut n_edit, mut pres, mut n_pres) = (0.0, 0usize, 0.0, 0usize);
    let (out, tgt, src) = (output.pixels(), triplet.target.pixels(), triplet.source.pixels());
    for (i, ((o, t), s)) in out.iter().zip(tgt).zip(src).enumerate() {
        if mask.bits()[(i / 3) % plane] {
            edit += (o - t).abs();
            n_edit += 1;
        } else {
            pres += (o - s).abs();
            n_pres += 1;
        }
    }
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    let (e, p) = (mean(edit, n_edit), mean(pres, n_pres));
    Ok(EditMetrics {
        edit_region_mae: e,
        preservation_mae: p,
        success: is_success(e, p, th),
    })
}

/// Binarized highlight of the last predicted reasoning frame.
pub fn reasoning_region(pred: &FrameClip, source: &FrameClip) -> Result<Mask> {
    let k = pred.frames();
    if k > source.frames() || pred.height() != source.height() || pred.width() != source.width() {
        return Err(CofError::Shape("reasoning prediction does not fit the source".into()));
    }
    let (h, w) = (pred.height(), pred.width());
    let mut m = Mask::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            let (p, s) = (pred.pixel(k - 1, y, x), source.pixel(k - 1, y, x));
            let dev = (0..3).map(|c| (p[c] - s[c]).abs()).fold(0.0, f64::max);
            if dev > REASONING_THRESHOLD {
                m.set(y, x);
            }
        }
    }
    Ok(m.close())
}

pub fn reasoning_iou(pred: &FrameClip, triplet: &EditTriplet) -> Result<f64> {
    if pred.frames() != triplet.reasoning_frames() {
        return Err(CofError::Shape(format!(
            "{} predicted reasoning frames, expected {}",
            pred.frames(),
            triplet.reasoning_frames()
        )));
    }
    Ok(reasoning_region(pred, &triplet.source)?.iou(&triplet.edit_mask))
}
