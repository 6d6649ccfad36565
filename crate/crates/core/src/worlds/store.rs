//! On-disk triplets: one directory per sample holding binary PPM frames, a
//! PGM mask and a JSON manifest.
//!
//! Reasoning frames are written for inspection only. Their blended values do
//! not sit on the 8-bit grid, so loading re-renders them from the source,
//! mask and recorded format.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::condition::{Attribute, ConditionCode, Selector, Task};
use super::edit::EditTriplet;
use super::reasoning::{render_reasoning, ReasoningBase, ReasoningFormat};
use super::{FrameClip, Mask};
use crate::{CofError, Result};

/// Per-sample manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletManifest {
    pub task: Task,
    pub selector: String,
    pub attribute: Attribute,
    pub triptych: bool,
    pub seed: u64,
    #[serde(rename = "F")]
    pub frames: usize,
    #[serde(rename = "K")]
    pub reasoning_frames: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub reasoning_format: ReasoningFormat,
    pub reasoning_base: ReasoningBase,
}

impl TripletManifest {
    pub fn condition(&self) -> Result<ConditionCode> {
        let cond = ConditionCode {
            task: self.task,
            selector: Selector::parse(&self.selector)?,
            attribute: self.attribute,
            triptych: self.triptych,
        };
        cond.validate()?;
        Ok(cond)
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_ppm(path: &Path, clip: &FrameClip, frame: usize) -> Result<()> {
    let (h, w) = (clip.height(), clip.width());
    let mut buf = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            buf.extend(clip.pixel(frame, y, x).map(to_byte));
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn write_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    buf.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a binary netpbm image with maxval 255; returns (width, height, bytes).
fn read_netpbm(path: &Path, magic: &str, channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| CofError::Format(format!("{}: {m}", path.display()));
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut fields = Vec::new();
    while fields.len() < 4 {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("truncated header"));
        }
        let line = line.split('#').next().unwrap_or("");
        fields.extend(line.split_whitespace().map(str::to_string));
    }
    if fields.len() != 4 || fields[0] != magic {
        return Err(bad(&format!("expected a {magic} header")));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let mut data = vec![0u8; w * h * channels];
    r.read_exact(&mut data).map_err(|_| bad("truncated pixel data"))?;
    Ok((w, h, data))
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let (w, h, data) = read_netpbm(path, "P6", 3)?;
    Ok((w, h, data.into_iter().map(|b| b as f64 / 255.0).collect()))
}

pub fn read_pgm(path: &Path) -> Result<Mask> {
    let (w, h, data) = read_netpbm(path, "P5", 1)?;
    Mask::from_bits(h, w, data.into_iter().map(|b| b >= 128).collect())
}

pub fn write_frames(dir: &Path, clip: &FrameClip) -> Result<()> {
    fs::create_dir_all(dir)?;
    for f in 0..clip.frames() {
        write_ppm(&dir.join(format!("{f:04}.ppm")), clip, f)?;
    }
    Ok(())
}

/// Reads `0000.ppm, 0001.ppm, ...` until the first missing index.
pub fn read_frames(dir: &Path) -> Result<FrameClip> {
    let mut pixels = Vec::new();
    let mut dims = None;
    let mut frames = 0;
    loop {
        let path = dir.join(format!("{frames:04}.ppm"));
        if !path.exists() {
            break;
        }
        let (w, h, px) = read_ppm(&path)?;
        if *dims.get_or_insert((w, h)) != (w, h) {
            return Err(CofError::Format(format!("{}: frame size changes", path.display())));
        }
        pixels.extend(px);
        frames += 1;
    }
    let (w, h) = dims.ok_or_else(|| CofError::Format(format!("{}: no frames", dir.display())))?;
    FrameClip::new(frames, h, w, pixels)
}

pub fn write_triplet(dir: &Path, t: &EditTriplet, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_frames(&dir.join("source"), &t.source)?;
    write_frames(&dir.join("reasoning"), &t.reasoning)?;
    write_frames(&dir.join("target"), &t.target)?;
    write_pgm(&dir.join("mask.pgm"), &t.edit_mask)?;
    let manifest = TripletManifest {
        task: t.condition.task,
        selector: t.condition.selector.name(),
        attribute: t.condition.attribute,
        triptych: t.condition.triptych,
        seed,
        frames: t.frames(),
        reasoning_frames: t.reasoning_frames(),
        height: t.source.height(),
        width: t.source.width(),
        reasoning_format: t.format.clone(),
        reasoning_base: t.base,
    };
    let mut f = fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<TripletManifest> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_triplet(dir: &Path) -> Result<EditTriplet> {
    let m = read_manifest(dir)?;
    let source = read_frames(&dir.join("source"))?;
    let target = read_frames(&dir.join("target"))?;
    let edit_mask = read_pgm(&dir.join("mask.pgm"))?;
    let geometry = (m.frames, m.height, m.width);
    for clip in [&source, &target] {
        if (clip.frames(), clip.height(), clip.width()) != geometry {
            return Err(CofError::Format(format!(
                "{}: clip geometry disagrees with manifest",
                dir.display()
            )));
        }
    }
    let base = match m.reasoning_base {
        ReasoningBase::Source => &source,
        ReasoningBase::Target => &target,
    };
    let reasoning = render_reasoning(
        &base.frame_range(0, m.reasoning_frames)?,
        &edit_mask,
        &m.reasoning_format,
    )?;
    Ok(EditTriplet {
        condition: m.condition()?,
        source,
        reasoning,
        target,
        edit_mask,
        format: m.reasoning_format,
        base: m.reasoning_base,
    })
}

/// Top-level index of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub count: usize,
    pub samples: Vec<String>,
    pub task_histogram: std::collections::BTreeMap<String, usize>,
}

pub fn sample_dir_name(index: usize) -> String {
    format!("sample_{index:05}")
}

pub fn write_dataset(root: &Path, triplets: &[EditTriplet], seeds: &[u64]) -> Result<DatasetManifest> {
    fs::create_dir_all(root)?;
    let mut manifest = DatasetManifest {
        count: triplets.len(),
        samples: Vec::new(),
        task_histogram: Default::default(),
    };
    for (i, (t, &seed)) in triplets.iter().zip(seeds).enumerate() {
        let name = sample_dir_name(i);
        write_triplet(&root.join(&name), t, seed)?;
        manifest.samples.push(name);
        *manifest
            .task_histogram
            .entry(t.condition.task.name().to_string())
            .or_default() += 1;
    }
    let mut f = fs::File::create(root.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    Ok(manifest)
}

pub fn read_dataset(root: &Path) -> Result<Vec<EditTriplet>> {
    let text = fs::read_to_string(root.join("manifest.json"))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    manifest
        .samples
        .iter()
        .map(|name| read_triplet(&root.join(name)).map_err(|e| CofError::Format(format!("sample {name}: {e}"))))
        .collect()
}
