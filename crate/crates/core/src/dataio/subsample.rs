use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeds::rng_from;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    DeterministicMidpoint,
    RandomInInterval,
}

/// Frame budget and placement rule for video subsampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSampleConfig {
    pub budget: usize,
    pub mode: SampleMode,
}

impl Default for FrameSampleConfig {
    fn default() -> Self {
        FrameSampleConfig {
            budget: 12,
            mode: SampleMode::DeterministicMidpoint,
        }
    }
}

impl FrameSampleConfig {
    pub fn deterministic(budget: usize) -> Self {
        FrameSampleConfig {
            budget,
            mode: SampleMode::DeterministicMidpoint,
        }
    }
}

/// Pick at most `cfg.budget` strictly increasing indices from `[0, t_len)`.
///
/// Videos no longer than the budget keep every frame. Longer videos are split
/// into equal intervals: the midpoint rule takes `floor((k + 0.5) * T / K)`,
/// the randomized rule draws one seeded index per interval.
pub fn subsample_indices(t_len: usize, cfg: &FrameSampleConfig, seed: u64) -> Result<Vec<usize>> {
    if t_len < 1 {
        return Err(Error::InvalidArgument(format!(
            "cannot subsample a {t_len}-frame video"
        )));
    }
    let k = cfg.budget;
    assert!(k >= 1, "frame budget must be at least 1");
    if t_len <= k {
        return Ok((0..t_len).collect());
    }
    match cfg.mode {
        SampleMode::DeterministicMidpoint => Ok((0..k)
            .map(|i| ((i as f64 + 0.5) * t_len as f64 / k as f64).floor() as usize)
            .collect()),
        SampleMode::RandomInInterval => {
            let mut rng = rng_from(seed);
            Ok((0..k)
                .map(|i| {
                    let lo = i * t_len / k;
                    let hi = (i + 1) * t_len / k;
                    rng.random_range(lo..hi)
                })
                .collect())
        }
    }
}
