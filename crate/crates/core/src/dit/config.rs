use serde::{Deserialize, Serialize};

use crate::rope::{band_pairs, RopeScheme, DEFAULT_BAND_SPLIT, DEFAULT_FREQ_BASE};
use crate::{CofError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Latent channels per token (input and output width).
    pub channels: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    /// Width of the condition and timestep embeddings.
    pub cond_width: usize,
    pub rope: RopeScheme,
    pub band_split: [usize; 3],
    pub freq_base: f64,
    /// Adds the copy head: one rotary attention head whose values are the raw
    /// input latents, gated per token and scaled by `1/t`.
    #[serde(default = "yes")]
    pub copy_head: bool,
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 48,
            d_model: 64,
            heads: 4,
            blocks: 2,
            mlp_ratio: 2,
            cond_width: 32,
            rope: RopeScheme::CoFAligned,
            band_split: DEFAULT_BAND_SPLIT,
            freq_base: DEFAULT_FREQ_BASE,
            copy_head: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.channels,
            self.d_model,
            self.heads,
            self.blocks,
            self.mlp_ratio,
            self.cond_width,
        ];
        if positive.contains(&0) {
            return Err(CofError::Config("model sizes must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(CofError::Config(format!(
                "d_model {} is not a multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if !self.cond_width.is_multiple_of(2) || self.cond_width < 4 {
            return Err(CofError::Config("cond_width must be even and at least 4".into()));
        }
        if self.freq_base.is_nan() || self.freq_base <= 1.0 {
            return Err(CofError::Config("freq_base must exceed 1".into()));
        }
        band_pairs(self.head_dim(), self.band_split)?;
        Ok(())
    }

    /// Parameter count implied by the config, in declaration order terms:
    /// embedding, condition tables, condition MLP, blocks, final layer.
    pub fn param_count(&self) -> usize {
        use crate::worlds::{Attribute, Selector, Task};
        let (c, d, dc, m) = (
            self.channels,
            self.d_model,
            self.cond_width,
            self.mlp_ratio * self.d_model,
        );
        let tables = 1 + 2 * (Selector::COUNT + Task::ALL.len() + Attribute::COUNT) + Selector::COUNT;
        let block = (dc * 6 * d + 6 * d) + (d * 3 * d + 3 * d) + (d * d + d) + (d * m + m) + (m * d + d);
        (c * d + d)
            + tables * dc
            + (dc * dc + dc)
            + self.blocks * block
            + (dc * 2 * d + 2 * d)
            + (d * c + c)
            + if self.copy_head {
                2 * d * self.head_dim() + d + 1
            } else {
                0
            }
    }
}
