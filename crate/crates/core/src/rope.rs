//! Rotary position indices for the concatenated source ‖ reasoning ‖ target
//! sequence and the factorized (temporal, y, x) rotation itself.

use std::collections::BTreeMap;

use cof_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::{CofError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RopeScheme {
    /// One running index over the whole sequence.
    #[serde(rename = "sequential")]
    Sequential,
    /// Every segment restarts at 0.
    #[serde(rename = "naive_reset")]
    NaiveReset,
    /// Source and target share `1..=F`; reasoning sits alone at 0.
    #[serde(rename = "cof")]
    CoFAligned,
}

impl RopeScheme {
    pub const ALL: [RopeScheme; 3] = [RopeScheme::Sequential, RopeScheme::NaiveReset, RopeScheme::CoFAligned];

    pub fn name(self) -> &'static str {
        match self {
            RopeScheme::Sequential => "sequential",
            RopeScheme::NaiveReset => "naive_reset",
            RopeScheme::CoFAligned => "cof",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        RopeScheme::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| CofError::Invalid(format!("unknown rope scheme {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Source,
    Reasoning,
    Target,
}

impl Segment {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Temporal index per latent frame of each segment, plus the spatial grid.
/// Tokens are ordered frame-major, then row, then column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RopePlan {
    pub scheme: RopeScheme,
    pub source: Vec<usize>,
    pub reasoning: Vec<usize>,
    pub target: Vec<usize>,
    pub grid_h: usize,
    pub grid_w: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenPosition {
    pub t: usize,
    pub y: usize,
    pub x: usize,
    pub segment: Segment,
}

pub fn plan(scheme: RopeScheme, f_src: usize, l: usize, f_tgt: usize) -> Result<RopePlan> {
    plan_with_grid(scheme, f_src, l, f_tgt, 1, 1)
}

/// Builds a plan. `l` may be 0 for sequences without reasoning frames.
pub fn plan_with_grid(
    scheme: RopeScheme,
    f_src: usize,
    l: usize,
    f_tgt: usize,
    grid_h: usize,
    grid_w: usize,
) -> Result<RopePlan> {
    if f_src == 0 || f_tgt == 0 || grid_h == 0 || grid_w == 0 {
        return Err(CofError::Invalid(format!(
            "empty plan: F_src={f_src} F_tgt={f_tgt} grid {grid_h}x{grid_w}"
        )));
    }
    let (source, reasoning, target) = match scheme {
        RopeScheme::Sequential => (
            (0..f_src).collect(),
            (f_src..f_src + l).collect(),
            (f_src + l..f_src + l + f_tgt).collect(),
        ),
        RopeScheme::NaiveReset => ((0..f_src).collect(), (0..l).collect(), (0..f_tgt).collect()),
        RopeScheme::CoFAligned => ((1..=f_src).collect(), vec![0; l], (1..=f_tgt).collect()),
    };
    Ok(RopePlan {
        scheme,
        source,
        reasoning,
        target,
        grid_h,
        grid_w,
    })
}

impl RopePlan {
    pub fn latent_frames(&self) -> usize {
        self.source.len() + self.reasoning.len() + self.target.len()
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn token_count(&self) -> usize {
        self.latent_frames() * self.tokens_per_frame()
    }

    /// `(segment, temporal index)` per latent frame, in sequence order.
    pub fn frames(&self) -> impl Iterator<Item = (Segment, usize)> + '_ {
        fn tag(seg: Segment, v: &[usize]) -> impl Iterator<Item = (Segment, usize)> + '_ {
            v.iter().map(move |&t| (seg, t))
        }
        tag(Segment::Source, &self.source)
            .chain(tag(Segment::Reasoning, &self.reasoning))
            .chain(tag(Segment::Target, &self.target))
    }

    pub fn tokens(&self) -> Vec<TokenPosition> {
        let mut out = Vec::with_capacity(self.token_count());
        for (segment, t) in self.frames() {
            for y in 0..self.grid_h {
                for x in 0..self.grid_w {
                    out.push(TokenPosition { t, y, x, segment });
                }
            }
        }
        out
    }

    /// Segment index (0 source, 1 reasoning, 2 target) of every token.
    pub fn token_segments(&self) -> Vec<usize> {
        self.frames()
            .flat_map(|(s, _)| std::iter::repeat_n(s.index(), self.tokens_per_frame()))
            .collect()
    }
}

/// Temporal indices shared by a reasoning frame and at least one frame of
/// another segment, with every segment holding them.
pub fn collisions(plan: &RopePlan) -> BTreeMap<usize, Vec<Segment>> {
    let mut holders: BTreeMap<usize, Vec<Segment>> = BTreeMap::new();
    for (seg, t) in plan.frames() {
        let e = holders.entry(t).or_default();
        if !e.contains(&seg) {
            e.push(seg);
        }
    }
    holders
        .into_iter()
        .filter(|(_, segs)| segs.len() >= 2 && segs.contains(&Segment::Reasoning))
        .map(|(t, mut segs)| {
            segs.sort();
            (t, segs)
        })
        .collect()
}

/// Head-dimension pairs given to the temporal, y and x bands, as a ratio.
pub const DEFAULT_BAND_SPLIT: [usize; 3] = [2, 1, 1];
pub const DEFAULT_FREQ_BASE: f64 = 10_000.0;

/// Pairs per band for a head of `head_dim` under `split`.
pub fn band_pairs(head_dim: usize, split: [usize; 3]) -> Result<[usize; 3]> {
    let parts: usize = split.iter().sum();
    if !head_dim.is_multiple_of(2) || parts == 0 || !(head_dim / 2).is_multiple_of(parts) || split.contains(&0) {
        return Err(CofError::Config(format!(
            "head_dim {head_dim} cannot be split {split:?} into rotary pairs"
        )));
    }
    let unit = head_dim / 2 / parts;
    Ok(split.map(|s| s * unit))
}

/// Per-token cosine and sine tables, each `[tokens, head_dim / 2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RotaryTables {
    pub cos: Tensor,
    pub sin: Tensor,
}

impl RotaryTables {
    pub fn new(plan: &RopePlan, head_dim: usize, split: [usize; 3], freq_base: f64) -> Result<Self> {
        let positions: Vec<[usize; 3]> = plan.tokens().iter().map(|p| [p.t, p.y, p.x]).collect();
        Self::from_positions(&positions, head_dim, split, freq_base)
    }

    pub fn from_positions(
        positions: &[[usize; 3]],
        head_dim: usize,
        split: [usize; 3],
        freq_base: f64,
    ) -> Result<Self> {
        let angles = rotary_angles(positions, head_dim, split, freq_base)?;
        let n = positions.len();
        let half = head_dim / 2;
        Ok(Self {
            cos: Tensor::new([n, half], angles.iter().map(|a| a.cos()).collect())?,
            sin: Tensor::new([n, half], angles.iter().map(|a| a.sin()).collect())?,
        })
    }
}

/// Rotation angle of every (token, pair): `index · base^(−2i / band_dim)`
/// within each band.
pub fn rotary_angles(positions: &[[usize; 3]], head_dim: usize, split: [usize; 3], freq_base: f64) -> Result<Vec<f64>> {
    let bands = band_pairs(head_dim, split)?;
    let mut freqs = Vec::with_capacity(head_dim / 2);
    for (b, &pairs) in bands.iter().enumerate() {
        let band_dim = 2 * pairs;
        for i in 0..pairs {
            freqs.push((b, freq_base.powf(-2.0 * i as f64 / band_dim as f64)));
        }
    }
    Ok(positions
        .iter()
        .flat_map(|pos| freqs.iter().map(move |&(b, w)| pos[b] as f64 * w))
        .collect())
}

/// Rotates pairs `(2i, 2i+1)` of the last axis of `x` (`[..., T, head_dim]`).
pub fn apply_rotary(x: &Tensor, tables: &RotaryTables) -> Result<Tensor> {
    let shape = x.shape();
    let (n, half) = (tables.cos.shape()[0], tables.cos.shape()[1]);
    if shape.len() < 2 || shape[shape.len() - 2] != n || shape[shape.len() - 1] != 2 * half {
        return Err(CofError::Shape(format!(
            "rotary tables [{n}, {half}] for input {shape:?}"
        )));
    }
    let (c, s) = (tables.cos.data(), tables.sin.data());
    let mut out = x.clone();
    for (row, chunk) in out.data_mut().chunks_mut(2 * half).enumerate() {
        let tok = row % n;
        for i in 0..half {
            let (a, b) = (chunk[2 * i], chunk[2 * i + 1]);
            let (ci, si) = (c[tok * half + i], s[tok * half + i]);
            chunk[2 * i] = a * ci - b * si;
            chunk[2 * i + 1] = a * si + b * ci;
        }
    }
    Ok(out)
}
