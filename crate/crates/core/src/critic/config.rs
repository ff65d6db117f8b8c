use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture hyperparameters for the reward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub embed_dim: usize,
    pub text_layers: usize,
    pub frame_layers: usize,
    /// Patch side length in pixels for the per-frame encoder.
    pub frame_patch: usize,
    pub temporal_layers: usize,
    pub temporal_heads: usize,
    /// Aggregation strategy name; see the aggregator registry.
    pub aggregator: String,
    pub max_frames: usize,
    pub image_size: usize,
    /// Fixed multiplier applied to cosine similarities so the cosine-based
    /// aggregators produce scores on a comparable range to the tight head.
    pub logit_scale: f64,
    pub max_text_len: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            embed_dim: 128,
            text_layers: 2,
            frame_layers: 2,
            frame_patch: 8,
            temporal_layers: 2,
            temporal_heads: 4,
            aggregator: "tight".to_string(),
            max_frames: 12,
            image_size: 64,
            logit_scale: 10.0,
            max_text_len: 16,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim % self.temporal_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be divisible by temporal_heads {}",
                self.embed_dim, self.temporal_heads
            )));
        }
        if self.max_frames < 1 {
            return Err(Error::Config("max_frames must be >= 1".into()));
        }
        if self.image_size % self.frame_patch != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be divisible by frame_patch {}",
                self.image_size, self.frame_patch
            )));
        }
        if self.text_layers == 0 || self.frame_layers == 0 {
            return Err(Error::Config("encoder depth must be >= 1".into()));
        }
        Ok(())
    }

    pub fn patches_per_frame(&self) -> usize {
        let side = self.image_size / self.frame_patch;
        side * side
    }

    pub fn patch_dim(&self) -> usize {
        self.frame_patch * self.frame_patch * 3
    }
}
