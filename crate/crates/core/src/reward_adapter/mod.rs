//! Turns raw critic scores into RL rewards: per-episode start offset, running
//! discounted-return variance scaling, and weighted combination with the
//! sparse environment reward.

use serde::{Deserialize, Serialize};

use crate::critic::{CachedScorer, CriticModel};
use crate::dataio::{subsample_indices, FrameSampleConfig};
use crate::taskworld::Frame;
use crate::{Error, Result};

/// Frames observed so far in the running episode, plus the first raw score
/// used as the episode's zero point.
pub struct EpisodeBuffer {
    pub frames: Vec<Frame>,
    pub caption: String,
    pub first_raw_score: Option<f64>,
}

impl EpisodeBuffer {
    pub fn new(caption: impl Into<String>) -> EpisodeBuffer {
        EpisodeBuffer {
            frames: Vec::new(),
            caption: caption.into(),
            first_raw_score: None,
        }
    }

    pub fn push_frame(&mut self, frame: Frame) {
        self.frames.push(frame);
    }
}

/// Deterministic-midpoint prefix score of the buffer: subsample the current
/// prefix to at most `budget` frames and return the final prefix score.
pub fn raw_reward(buffer: &EpisodeBuffer, model: &CriticModel<f32>, budget: usize) -> Result<f64> {
    if buffer.frames.is_empty() {
        return Err(Error::InvalidArgument("empty episode buffer".into()));
    }
    let idx = subsample_indices(
        buffer.frames.len(),
        &FrameSampleConfig::deterministic(budget),
        0,
    )?;
    let frames: Vec<Frame> = idx.into_iter().map(|i| buffer.frames[i].clone()).collect();
    model.score(&frames, &buffer.caption)
}

/// Shift so the episode's first reward is exactly zero: the first call stores
/// the raw score and returns 0, later calls return `raw - first`.
pub fn offset(buffer: &mut EpisodeBuffer, raw: f64) -> f64 {
    match buffer.first_raw_score {
        None => {
            buffer.first_raw_score = Some(raw);
            0.0
        }
        Some(first) => raw - first,
    }
}

/// Running discounted-return statistics; rewards are divided by the return
/// standard deviation (parallel-variance update, one sample per step).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizerState {
    pub mean: f64,
    pub var: f64,
    pub count: f64,
    pub ret: f64,
    pub gamma: f64,
    pub eps: f64,
}

impl NormalizerState {
    pub fn new(gamma: f64) -> NormalizerState {
        NormalizerState {
            mean: 0.0,
            var: 1.0,
            count: 1e-4,
            ret: 0.0,
            gamma,
            eps: 1e-8,
        }
    }

    /// Fold the updated discounted return into the running statistics and
    /// scale the reward by the current return standard deviation.
    pub fn scale(&mut self, r: f64) -> Result<f64> {
        if !r.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite reward {r}")));
        }
        self.ret = self.gamma * self.ret + r;
        // Chan parallel-variance merge with batch (mean = ret, var = 0, n = 1)
        let total = self.count + 1.0;
        let delta = self.ret - self.mean;
        let m2 = self.var * self.count + delta * delta * self.count / total;
        self.mean += delta / total;
        self.var = m2 / total;
        self.count = total;
        debug_assert!(self.var >= 0.0);
        Ok(r / (self.var + self.eps).sqrt())
    }

    /// Episode termination resets the return accumulator; statistics persist.
    pub fn end_episode(&mut self) {
        self.ret = 0.0;
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardCombinerConfig {
    pub w_vlc: f64,
    pub w_sparse: f64,
}

impl Default for RewardCombinerConfig {
    fn default() -> Self {
        RewardCombinerConfig {
            w_vlc: 1.0,
            w_sparse: 50.0,
        }
    }
}

/// `w_vlc * vlc_r + w_sparse * sparse_r`.
pub fn combine(vlc_r: f64, sparse_r: f64, cfg: &RewardCombinerConfig) -> f64 {
    cfg.w_vlc * vlc_r + cfg.w_sparse * sparse_r
}

/// Where the variance scaler sits relative to the sparse combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeOrder {
    /// Scale the combined reward (default).
    OffsetCombineScale,
    /// Scale the dense component only, then add the weighted sparse reward.
    OffsetScaleCombine,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardPipelineConfig {
    pub combiner: RewardCombinerConfig,
    pub order: NormalizeOrder,
    pub frame_budget: usize,
}

impl Default for RewardPipelineConfig {
    fn default() -> Self {
        RewardPipelineConfig {
            combiner: RewardCombinerConfig::default(),
            order: NormalizeOrder::OffsetCombineScale,
            frame_budget: 12,
        }
    }
}

/// Per-environment reward pipeline. One instance per environment; normalizer
/// state is never shared.
pub struct RewardAdapter<'m> {
    scorer: Option<CachedScorer<'m>>,
    buffer: EpisodeBuffer,
    pub normalizer: NormalizerState,
    pub cfg: RewardPipelineConfig,
}

impl<'m> RewardAdapter<'m> {
    /// Dense + sparse pipeline backed by a critic.
    pub fn with_critic(
        model: &'m CriticModel<f32>,
        caption: &str,
        gamma: f64,
        cfg: RewardPipelineConfig,
    ) -> Result<RewardAdapter<'m>> {
        Ok(RewardAdapter {
            scorer: Some(CachedScorer::new(model, caption)?),
            buffer: EpisodeBuffer::new(caption),
            normalizer: NormalizerState::new(gamma),
            cfg,
        })
    }

    /// Sparse-only pipeline (the dense term is identically zero).
    pub fn sparse_only(gamma: f64, cfg: RewardPipelineConfig) -> RewardAdapter<'m> {
        RewardAdapter {
            scorer: None,
            buffer: EpisodeBuffer::new(""),
            normalizer: NormalizerState::new(gamma),
            cfg,
        }
    }

    pub fn begin_episode(&mut self) {
        self.buffer.frames.clear();
        self.buffer.first_raw_score = None;
        if let Some(s) = self.scorer.as_mut() {
            s.reset();
        }
    }

    /// Append a frame (the reset observation) without emitting a reward.
    pub fn prime(&mut self, frame: Frame) {
        if self.scorer.is_some() {
            self.buffer.push_frame(frame);
        }
    }

    /// Process one environment step: push the rendered frame (if running the
    /// dense pipeline), score the prefix, offset, combine with the sparse
    /// reward, scale, and reset the return accumulator on `done`.
    pub fn step(&mut self, frame: Option<Frame>, sparse: f64, done: bool) -> Result<f64> {
        let vlc_off = match (&mut self.scorer, frame) {
            (Some(scorer), Some(frame)) => {
                self.buffer.push_frame(frame);
                let idx = subsample_indices(
                    self.buffer.frames.len(),
                    &FrameSampleConfig::deterministic(self.cfg.frame_budget),
                    0,
                )?;
                let raw = scorer.score_prefix(&self.buffer.frames, &idx)?;
                offset(&mut self.buffer, raw)
            }
            (Some(_), None) => {
                return Err(Error::InvalidArgument(
                    "dense reward pipeline needs a frame per step".into(),
                ))
            }
            (None, _) => 0.0,
        };
        let reward = match self.cfg.order {
            NormalizeOrder::OffsetCombineScale => {
                let combined = combine(vlc_off, sparse, &self.cfg.combiner);
                self.normalizer.scale(combined)?
            }
            NormalizeOrder::OffsetScaleCombine => {
                let scaled = self.normalizer.scale(self.cfg.combiner.w_vlc * vlc_off)?;
                scaled + self.cfg.combiner.w_sparse * sparse
            }
        };
        if done {
            self.normalizer.end_episode();
        }
        Ok(reward)
    }
}
