//! Concatenation of the three encoded segments, partial noising, the masked
//! velocity loss and target extraction.

use std::ops::Range;

use cof_tensor::{Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::codec::LatentClip;
use crate::{CofError, Result};

/// Latent-frame lengths of the source, reasoning and target segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Boundaries {
    pub source: usize,
    pub reasoning: usize,
    pub target: usize,
}

impl Boundaries {
    pub fn total(&self) -> usize {
        self.source + self.reasoning + self.target
    }

    pub fn source_range(&self) -> Range<usize> {
        0..self.source
    }

    pub fn reasoning_range(&self) -> Range<usize> {
        self.source..self.source + self.reasoning
    }

    pub fn target_range(&self) -> Range<usize> {
        self.source + self.reasoning..self.total()
    }
}

/// The concatenated latent sequence at noise level `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct FullSequence {
    pub z: Tensor,
    pub bounds: Boundaries,
    pub t: f64,
    /// Pixel frame counts of the three segments, for decoding.
    pub pixel_frames: [usize; 3],
}

/// Concatenates `source ‖ reasoning ‖ target` along the frame axis. Passing
/// no reasoning clip gives the plain in-context layout.
pub fn assemble(zs: &LatentClip, zr: Option<&LatentClip>, ze: &LatentClip) -> Result<FullSequence> {
    let mut parts = vec![&zs.values];
    if let Some(zr) = zr {
        parts.push(&zr.values);
    }
    parts.push(&ze.values);
    let inner = &zs.values.shape()[1..];
    if parts.iter().any(|p| &p.shape()[1..] != inner) {
        return Err(CofError::Shape(format!(
            "segments disagree on channels/grid: {:?}",
            parts.iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>()
        )));
    }
    let bounds = Boundaries {
        source: zs.frames(),
        reasoning: zr.map_or(0, |z| z.frames()),
        target: ze.frames(),
    };
    Ok(FullSequence {
        z: Tensor::concat(&parts, 0)?,
        bounds,
        t: 0.0,
        pixel_frames: [zs.pixel_frames, zr.map_or(0, |z| z.pixel_frames), ze.pixel_frames],
    })
}

impl FullSequence {
    fn segment(&self, range: Range<usize>, pixel_frames: usize) -> Result<LatentClip> {
        LatentClip::new(self.z.slice_axis(0, range.start, range.len())?, pixel_frames)
    }

    pub fn source(&self) -> Result<LatentClip> {
        self.segment(self.bounds.source_range(), self.pixel_frames[0])
    }

    pub fn reasoning(&self) -> Result<Option<LatentClip>> {
        if self.bounds.reasoning == 0 {
            return Ok(None);
        }
        self.segment(self.bounds.reasoning_range(), self.pixel_frames[1])
            .map(Some)
    }

    /// Elements per latent frame.
    pub fn frame_len(&self) -> usize {
        self.z.len() / self.bounds.total()
    }
}

/// Noise and the matching velocity target `v = ε − z0`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePair {
    pub eps: Tensor,
    pub v: Tensor,
}

impl NoisePair {
    /// Builds a pair from raw noise. `ε` is re-derived as `v + z0` so that
    /// `v + z0 == ε` holds exactly in floating point.
    pub fn from_raw(z0: &Tensor, raw: &Tensor) -> Result<Self> {
        let v = raw.zip_map(z0, |e, z| e - z)?;
        let eps = v.zip_map(z0, |v, z| v + z)?;
        Ok(Self { eps, v })
    }

    pub fn sample<R: Rng + ?Sized>(z0: &Tensor, rng: &mut R) -> Result<Self> {
        let raw = Tensor::from_fn(z0.shape(), |_| rng.sample::<f64, _>(StandardNormal))?;
        Self::from_raw(z0, &raw)
    }
}

/// `z_{r,e} = (1 − t) z_{r,e} + t ε_{r,e}`; the source segment is untouched.
pub fn partial_noise(seq: &FullSequence, eps: &Tensor, t: f64) -> Result<FullSequence> {
    if !(0.0..=1.0).contains(&t) {
        return Err(CofError::Invalid(format!("timestep {t} outside [0, 1]")));
    }
    if eps.shape() != seq.z.shape() {
        return Err(CofError::Shape(format!(
            "noise {:?} for sequence {:?}",
            eps.shape(),
            seq.z.shape()
        )));
    }
    let start = seq.bounds.source * seq.frame_len();
    let mut z = seq.z.clone();
    for (zi, &e) in z.data_mut()[start..].iter_mut().zip(&eps.data()[start..]) {
        *zi = (1.0 - t) * *zi + t * e;
    }
    Ok(FullSequence { z, t, ..seq.clone() })
}

/// Supervised latent frames: reasoning and target.
pub fn loss_mask_indices(bounds: &Boundaries) -> Range<usize> {
    bounds.source..bounds.total()
}

/// Mean over supervised frames of each frame's mean squared error.
///
/// Accepts one sequence (`[frames, C, h, w]`) or a batch
/// (`[batch, frames, C, h, w]`); a batch gives the mean of per-sample losses.
pub fn masked_velocity_loss(tape: &mut Tape, v_hat: Var, v: &Tensor, bounds: &Boundaries) -> Result<Var> {
    let rank = v.rank();
    if tape.value(v_hat).shape() != v.shape() || !(rank == 4 || rank == 5) || v.shape()[rank - 4] != bounds.total() {
        return Err(CofError::Shape(format!(
            "prediction {:?} vs target {:?}",
            tape.value(v_hat).shape(),
            v.shape()
        )));
    }
    let axis = rank - 4;
    let r = loss_mask_indices(bounds);
    // Every frame has the same element count, so the mean of per-frame means
    // is the element mean over the supervised slice.
    let pred = tape.slice(v_hat, axis, r.start, r.len())?;
    let want = tape.constant(v.slice_axis(axis, r.start, r.len())?);
    let diff = tape.sub(pred, want)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq)?)
}

/// Target segment, using the same slice as training supervision.
pub fn extract_edit(seq: &FullSequence) -> Result<LatentClip> {
    seq.segment(seq.bounds.target_range(), seq.pixel_frames[2])
}
