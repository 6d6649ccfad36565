//! Chain-of-frames video editing at desk scale.
//!
//! A source clip, a reasoning clip that greys out the region to edit, and the
//! edited target are encoded separately, concatenated along time and denoised
//! jointly by a small diffusion transformer. Only the reasoning and target
//! segments are noised; the source stays clean and anchors the edit.
//!
//! Module map:
//! - [`worlds`]: procedural scenes, edit triplets and condition codes
//! - [`codec`]: lossless patchify codec
//! - [`rope`]: rotary index plans for the concatenated sequence
//! - [`sequencer`]: assembly, partial noising, masked loss, extraction
//! - [`dit`]: the transformer and its checkpoints
//! - [`trainer`], [`sampler`]: training loop and Euler sampling
//! - [`bench`]: metrics, ablations and length extrapolation

pub mod bench;
pub mod codec;
pub mod dit;
mod error;
pub mod rope;
pub mod sampler;
pub mod sequencer;
pub mod trainer;
pub mod worlds;

pub use error::{CofError, Result};
