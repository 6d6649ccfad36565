use super::condition::{Attribute, ConditionCode, Task};
use super::reasoning::{render_reasoning, ReasoningBase, ReasoningFormat};
use super::scene::{render_scene, swept_mask, SceneSpec};
use super::{FrameClip, Mask};
use crate::{CofError, Result};

/// One sample: source, reasoning and target clips plus ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct EditTriplet {
    pub source: FrameClip,
    pub reasoning: FrameClip,
    pub target: FrameClip,
    pub condition: ConditionCode,
    pub edit_mask: Mask,
    pub format: ReasoningFormat,
    pub base: ReasoningBase,
}

impl EditTriplet {
    pub fn frames(&self) -> usize {
        self.source.frames()
    }

    pub fn reasoning_frames(&self) -> usize {
        self.reasoning.frames()
    }
}

/// Source and target scenes for an edit, plus the index of the edited
/// instance in each (`None` where it is absent).
fn edit_scenes(spec: &SceneSpec, cond: &ConditionCode) -> Result<(SceneSpec, SceneSpec, usize)> {
    let sel = cond.selector.resolve(&spec.instances)?;
    let chosen = spec.instances[sel];
    match (cond.task, cond.attribute) {
        (Task::Remove, Attribute::None) => Ok((spec.clone(), spec.without(sel), sel)),
        (Task::Add, Attribute::ShapeColor(kind, color)) => {
            if chosen.kind != kind || chosen.color != color {
                return Err(CofError::Generation(format!(
                    "add attribute {:?} does not describe the selected instance",
                    cond.attribute
                )));
            }
            Ok((spec.without(sel), spec.clone(), sel))
        }
        (Task::Swap, Attribute::Shape(kind)) => {
            if chosen.kind == kind {
                return Err(CofError::Generation("swap to the same shape".into()));
            }
            let mut target = spec.clone();
            target.instances[sel].kind = kind;
            Ok((spec.clone(), target, sel))
        }
        (Task::Recolor, Attribute::Color(color)) => {
            if chosen.color == color {
                return Err(CofError::Generation("recolor to the same color".into()));
            }
            let mut target = spec.clone();
            target.instances[sel].color = color;
            Ok((spec.clone(), target, sel))
        }
        _ => {
            cond.validate()?;
            unreachable!("validate rejects mismatched task/attribute pairs")
        }
    }
}

/// Builds a triplet with progressive gray reasoning over the source.
pub fn make_triplet(spec: &SceneSpec, cond: &ConditionCode, k: usize) -> Result<EditTriplet> {
    make_triplet_with(spec, cond, k, &ReasoningFormat::ProgressiveGray, ReasoningBase::Source)
}

/// Builds a triplet. For `add`, `spec` describes the edited scene and the
/// selector names the instance that appears.
pub fn make_triplet_with(
    spec: &SceneSpec,
    cond: &ConditionCode,
    k: usize,
    format: &ReasoningFormat,
    base: ReasoningBase,
) -> Result<EditTriplet> {
    cond.validate()?;
    if k == 0 || k > spec.frames {
        return Err(CofError::Invalid(format!(
            "{k} reasoning frames for a {}-frame clip",
            spec.frames
        )));
    }
    let (src_spec, tgt_spec, sel) = edit_scenes(spec, cond)?;
    let source = render_scene(&src_spec)?;
    let target = render_scene(&tgt_spec)?;

    let (h, w, f) = (spec.height, spec.width, spec.frames);
    let mut mask = swept_mask(&spec.instances[sel], f, h, w);
    let other = match cond.task {
        Task::Swap | Task::Recolor => Some(tgt_spec.instances[sel]),
        Task::Remove | Task::Add => None,
    };
    if let Some(inst) = other {
        let m = swept_mask(&inst, f, h, w);
        for y in 0..h {
            for x in 0..w {
                if m.get(y, x) {
                    mask.set(y, x);
                }
            }
        }
    }
    let edit_mask = mask.dilate();

    let base_clip = match base {
        ReasoningBase::Source => &source,
        ReasoningBase::Target => &target,
    };
    let reasoning = render_reasoning(&base_clip.frame_range(0, k)?, &edit_mask, format)?;
    Ok(EditTriplet {
        source,
        reasoning,
        target,
        condition: *cond,
        edit_mask,
        format: format.clone(),
        base,
    })
}
