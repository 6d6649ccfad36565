//! Animated GIF previews of frame clips.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Result};
use cof_core::worlds::FrameClip;

/// Gap between panels, in source pixels.
const GAP: usize = 2;
const GAP_COLOR: [u8; 3] = [64, 64, 64];

/// Lays the clips out left to right and writes one GIF frame per clip frame.
/// Panels shorter than the longest clip show black once they run out.
pub fn write_gif(path: &Path, panels: &[&FrameClip], delay_cs: u16, scale: usize) -> Result<()> {
    let Some(first) = panels.first() else {
        bail!("nothing to render");
    };
    let h = first.height();
    if panels.iter().any(|p| p.height() != h) {
        bail!("panels differ in height");
    }
    if scale == 0 {
        bail!("scale must be positive");
    }
    let frames = panels.iter().map(|p| p.frames()).max().unwrap_or(0);
    let w: usize = panels.iter().map(|p| p.width()).sum::<usize>() + GAP * (panels.len() - 1);
    let (out_w, out_h) = (w * scale, h * scale);
    let (Ok(gw), Ok(gh)) = (u16::try_from(out_w), u16::try_from(out_h)) else {
        bail!("{out_w}x{out_h} is too large for a GIF");
    };
    let mut enc = gif::Encoder::new(BufWriter::new(File::create(path)?), gw, gh, &[])?;
    enc.set_repeat(gif::Repeat::Infinite)?;
    for f in 0..frames {
        let mut row_major = vec![0u8; w * h * 3];
        let mut x0 = 0;
        for (i, p) in panels.iter().enumerate() {
            if i > 0 {
                for y in 0..h {
                    for x in x0..x0 + GAP {
                        row_major[(y * w + x) * 3..][..3].copy_from_slice(&GAP_COLOR);
                    }
                }
                x0 += GAP;
            }
            if f < p.frames() {
                for y in 0..h {
                    for x in 0..p.width() {
                        let px = p.pixel(f, y, x).map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
                        row_major[(y * w + x0 + x) * 3..][..3].copy_from_slice(&px);
                    }
                }
            }
            x0 += p.width();
        }
        let mut scaled = Vec::with_capacity(out_w * out_h * 3);
        for y in 0..out_h {
            for x in 0..out_w {
                scaled.extend_from_slice(&row_major[((y / scale) * w + x / scale) * 3..][..3]);
            }
        }
        let mut frame = gif::Frame::from_rgb_speed(gw, gh, &scaled, 10);
        frame.delay = delay_cs;
        enc.write_frame(&frame)?;
    }
    Ok(())
}
