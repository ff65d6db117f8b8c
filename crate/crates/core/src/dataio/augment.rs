use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeds::rng_from;
use crate::taskworld::Frame;

/// Training-time image augmentation. All jitters are drawn once per episode
/// and shared across its frames, so temporal structure is untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub brightness_lo: f64,
    pub brightness_hi: f64,
    pub noise_high: f64,
    /// Maximum crop-and-resize shift, in pixels.
    pub crop_jitter: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            brightness_lo: 0.85,
            brightness_hi: 1.15,
            noise_high: 0.03,
            crop_jitter: 2,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.brightness_lo < 0.0 || self.brightness_hi < self.brightness_lo || self.noise_high < 0.0 {
            return Err(crate::Error::Config(format!(
                "augmentation ranges must be nonnegative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Apply one seeded jitter (brightness factor, additive noise field, integer
/// crop shift) to a whole episode's frames; output stays in [0, 1].
pub fn augment(frames: &[Frame], cfg: &AugmentConfig, seed: u64) -> Vec<Frame> {
    if !cfg.enabled || frames.is_empty() {
        return frames.to_vec();
    }
    let mut rng = rng_from(seed);
    let brightness = if cfg.brightness_hi > cfg.brightness_lo {
        rng.random_range(cfg.brightness_lo..cfg.brightness_hi) as f32
    } else {
        cfg.brightness_lo as f32
    };
    let j = cfg.crop_jitter as i64;
    let (dx, dy) = if j > 0 {
        (rng.random_range(-j..=j), rng.random_range(-j..=j))
    } else {
        (0, 0)
    };
    let dim = frames[0].dim();
    let noise = if cfg.noise_high > 0.0 {
        let high = cfg.noise_high as f32;
        Some(Array3::from_shape_fn(dim, |_| rng.random_range(0.0..high)))
    } else {
        None
    };
    frames
        .iter()
        .map(|f| {
            let (h, w, c) = f.dim();
            let mut out = Array3::<f32>::zeros((h, w, c));
            for r in 0..h {
                let sr = (r as i64 + dy).clamp(0, h as i64 - 1) as usize;
                for col in 0..w {
                    let sc = (col as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    for ch in 0..c {
                        let mut v = f[[sr, sc, ch]] * brightness;
                        if let Some(n) = &noise {
                            v += n[[r, col, ch]];
                        }
                        out[[r, col, ch]] = v.clamp(0.0, 1.0);
                    }
                }
            }
            out
        })
        .collect()
}
