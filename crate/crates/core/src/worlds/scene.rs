use serde::{Deserialize, Serialize};

use super::{rgb, FrameClip, Mask, BACKGROUND_COLORS, SHAPE_COLORS};
use crate::{CofError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Square, ShapeKind::Circle, ShapeKind::Triangle];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether local pixel `(i, j)` (column, row) lies inside a shape of
    /// bounding size `s`. Doubled coordinates keep the test in integers.
    fn covers(self, i: i64, j: i64, s: i64) -> bool {
        match self {
            ShapeKind::Square => true,
            ShapeKind::Circle => {
                let (dx, dy) = (2 * i + 1 - s, 2 * j + 1 - s);
                dx * dx + dy * dy <= s * s
            }
            ShapeKind::Triangle => (2 * i + 1 - s).abs() <= j,
        }
    }
}

/// One moving shape. Position is the top-left corner of its bounding box;
/// velocity is in quarter pixels per frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub kind: ShapeKind,
    pub color: usize,
    pub size: u32,
    pub x: i32,
    pub y: i32,
    pub vx_q: i32,
    pub vy_q: i32,
}

impl Instance {
    pub fn position(&self, frame: usize) -> (i64, i64) {
        let f = frame as i64;
        (
            self.x as i64 + (self.vx_q as i64 * f).div_euclid(4),
            self.y as i64 + (self.vy_q as i64 * f).div_euclid(4),
        )
    }

    /// Horizontal bounding-box center at frame 0, in doubled pixels.
    pub fn center_x2(&self) -> i64 {
        2 * self.x as i64 + self.size as i64
    }

    /// Canvas pixels covered at `frame`, clipped to the canvas.
    pub fn coverage(&self, frame: usize, height: usize, width: usize) -> Vec<(usize, usize)> {
        let (px, py) = self.position(frame);
        let s = self.size as i64;
        let mut out = Vec::new();
        for j in 0..s {
            for i in 0..s {
                let (x, y) = (px + i, py + j);
                if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                    continue;
                }
                if self.kind.covers(i, j, s) {
                    out.push((y as usize, x as usize));
                }
            }
        }
        out
    }

    /// Whether the bounding box lies fully inside the canvas at `frame`.
    pub fn inside(&self, frame: usize, height: usize, width: usize) -> bool {
        let (px, py) = self.position(frame);
        let s = self.size as i64;
        px >= 0 && py >= 0 && px + s <= width as i64 && py + s <= height as i64
    }

    /// Bounding box `(x0, y0, x1, y1)` swept over `frames` frames (exclusive max).
    pub fn swept_box(&self, frames: usize) -> (i64, i64, i64, i64) {
        let s = self.size as i64;
        let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        for f in 0..frames {
            let (px, py) = self.position(f);
            x0 = x0.min(px);
            y0 = y0.min(py);
            x1 = x1.max(px + s);
            y1 = y1.max(py + s);
        }
        (x0, y0, x1, y1)
    }
}

/// Everything needed to rasterize a scene deterministically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub instances: Vec<Instance>,
    pub background: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(CofError::Generation("empty canvas or clip".into()));
        }
        if self.background >= BACKGROUND_COLORS.len() {
            return Err(CofError::Generation(format!("unknown background {}", self.background)));
        }
        for (n, inst) in self.instances.iter().enumerate() {
            if inst.color >= SHAPE_COLORS.len() || inst.size == 0 {
                return Err(CofError::Generation(format!("instance {n} has invalid color/size")));
            }
            for f in 0..self.frames {
                if inst.coverage(f, self.height, self.width).is_empty() {
                    return Err(CofError::Generation(format!(
                        "instance {n} leaves the canvas at frame {f}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn with_frames(&self, frames: usize) -> Self {
        Self { frames, ..self.clone() }
    }

    pub fn without(&self, index: usize) -> Self {
        let mut s = self.clone();
        s.instances.remove(index);
        s
    }
}

/// Rasterizes a scene; later instances are drawn over earlier ones.
pub fn render_scene(spec: &SceneSpec) -> Result<FrameClip> {
    spec.validate()?;
    let bg = rgb(BACKGROUND_COLORS[spec.background]);
    let mut clip = FrameClip::filled(spec.frames, spec.height, spec.width, bg)?;
    for f in 0..spec.frames {
        for inst in &spec.instances {
            let c = rgb(SHAPE_COLORS[inst.color]);
            for (y, x) in inst.coverage(f, spec.height, spec.width) {
                clip.set_pixel(f, y, x, c);
            }
        }
    }
    Ok(clip)
}

/// Union over all frames of the pixels an instance covers.
pub(crate) fn swept_mask(inst: &Instance, frames: usize, height: usize, width: usize) -> Mask {
    let mut m = Mask::empty(height, width);
    for f in 0..frames {
        for (y, x) in inst.coverage(f, height, width) {
            m.set(y, x);
        }
    }
    m
}
