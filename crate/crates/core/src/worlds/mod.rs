//! Procedural edit triplets with exact ground truth.
//!
//! Scenes are a few flat-colored shapes moving linearly over a flat
//! background. Rasterization is integer-only, so a seed reproduces the same
//! pixels everywhere.

mod condition;
mod dataset;
mod edit;
mod reasoning;
mod scene;
pub mod store;

pub use condition::{embed_condition, Attribute, ConditionCode, ConditionTables, Selector, Task};
pub use dataset::{BenchmarkSampler, SamplerConfig};
pub use edit::{make_triplet, EditTriplet};
pub use reasoning::{render_reasoning, ReasoningBase, ReasoningFormat};
pub use scene::{render_scene, Instance, SceneSpec, ShapeKind};

use crate::{CofError, Result};

/// Shape colors. Every channel set keeps its most extreme channel at least
/// 0.2 away from mid-gray, so gray highlighting always shows up.
pub const SHAPE_COLORS: [[u8; 3]; 6] = [
    [230, 40, 40],
    [40, 200, 60],
    [40, 70, 230],
    [240, 220, 30],
    [220, 50, 210],
    [30, 210, 220],
];

pub const BACKGROUND_COLORS: [[u8; 3]; 3] = [[15, 15, 25], [235, 235, 235], [20, 30, 70]];

pub fn rgb(c: [u8; 3]) -> [f64; 3] {
    [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0]
}

/// Pixel video segment, `frames × height × width × 3`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameClip {
    frames: usize,
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl FrameClip {
    pub fn new(frames: usize, height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(CofError::Shape(format!("empty clip {frames}x{height}x{width}")));
        }
        if pixels.len() != frames * height * width * 3 {
            return Err(CofError::Shape(format!(
                "{} values for a {frames}x{height}x{width}x3 clip",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(CofError::Invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            frames,
            height,
            width,
            pixels,
        })
    }

    pub fn filled(frames: usize, height: usize, width: usize, color: [f64; 3]) -> Result<Self> {
        let pixels = (0..frames * height * width).flat_map(|_| color).collect();
        Self::new(frames, height, width, pixels)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    fn offset(&self, f: usize, y: usize, x: usize) -> usize {
        ((f * self.height + y) * self.width + x) * 3
    }

    pub fn pixel(&self, f: usize, y: usize, x: usize) -> [f64; 3] {
        let o = self.offset(f, y, x);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub(crate) fn set_pixel(&mut self, f: usize, y: usize, x: usize, c: [f64; 3]) {
        let o = self.offset(f, y, x);
        self.pixels[o..o + 3].copy_from_slice(&c);
    }

    /// Frames `[start, start + len)` as a new clip.
    pub fn frame_range(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames {
            return Err(CofError::Invalid(format!(
                "frames {start}..{} of a {}-frame clip",
                start + len,
                self.frames
            )));
        }
        let per = self.height * self.width * 3;
        Self::new(
            len,
            self.height,
            self.width,
            self.pixels[start * per..(start + len) * per].to_vec(),
        )
    }

    /// Clamps to `[0, 1]` and snaps every value to the 8-bit grid `k / 255`.
    pub fn quantized_from(frames: usize, height: usize, width: usize, raw: &[f64]) -> Result<Self> {
        let pixels = raw
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
            .collect();
        Self::new(frames, height, width, pixels)
    }

    pub fn same_geometry(&self, other: &FrameClip) -> bool {
        self.frames == other.frames && self.height == other.height && self.width == other.width
    }
}

/// Boolean `height × width` mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(CofError::Shape(format!(
                "{} mask bits for {height}x{width}",
                bits.len()
            )));
        }
        Ok(Self { height, width, bits })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize) {
        self.bits[y * self.width + x] = true;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 3×3 square dilation.
    pub fn dilate(&self) -> Self {
        let mut out = Self::empty(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(y, x) {
                    continue;
                }
                for ny in y.saturating_sub(1)..(y + 2).min(self.height) {
                    for nx in x.saturating_sub(1)..(x + 2).min(self.width) {
                        out.set(ny, nx);
                    }
                }
            }
        }
        out
    }

    /// 3×3 square erosion; pixels outside the canvas count as set.
    pub fn erode(&self) -> Self {
        let mut out = Self::empty(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                let all = (y.saturating_sub(1)..(y + 2).min(self.height))
                    .all(|ny| (x.saturating_sub(1)..(x + 2).min(self.width)).all(|nx| self.get(ny, nx)));
                if all {
                    out.set(y, x);
                }
            }
        }
        out
    }

    /// Morphological closing (dilation then erosion).
    pub fn close(&self) -> Self {
        self.dilate().erode()
    }

    /// Intersection over union; two empty masks score 0.
    pub fn iou(&self, other: &Mask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_clears_gray_margin() {
        for c in SHAPE_COLORS.iter().chain(&BACKGROUND_COLORS) {
            let d = rgb(*c).iter().map(|v| (v - 0.5).abs()).fold(0.0, f64::max);
            assert!(d >= 0.2, "{c:?}");
        }
    }

    #[test]
    fn clip_rejects_out_of_range_pixels() {
        assert!(FrameClip::new(1, 1, 1, vec![0.0, 1.1, 0.0]).is_err());
        assert!(FrameClip::new(1, 1, 1, vec![0.0, 1.0, 0.0]).is_ok());
    }

    #[test]
    fn closing_fills_single_pixel_holes() {
        let mut m = Mask::empty(7, 7);
        for y in 2..5 {
            for x in 2..5 {
                if (y, x) != (3, 3) {
                    m.set(y, x);
                }
            }
        }
        let c = m.close();
        assert!(c.get(3, 3));
        assert_eq!(c.count(), 9);
    }
}
