//! Toy diffusion transformer over the concatenated latent sequence.
//!
//! Tokens are latent patches, ordered frame-major. Every block applies
//! bidirectional self-attention with rotary positions from a [`RopePlan`]
//! and an MLP, both modulated (shift, scale, gate) by the condition row of
//! the token's segment plus a sinusoidal timestep embedding.
//!
//! [`RopePlan`]: crate::rope::RopePlan

pub mod checkpoint;
mod config;
mod model;

pub use config::ModelConfig;
pub use model::{forward, layout, timestep_embed, timestep_freqs, timestep_lipschitz, Bound, ModelState, Prepared};
