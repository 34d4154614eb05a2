//! Stage 4: distillation training of the final multi-class segmenter,
//! plus the augmentation pipeline and inference.

pub mod augment;
pub mod predict;
pub mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment, copy_paste};
pub use predict::{predict, ResizePolicy, SoftPrediction};
pub use trainer::{train_segmenter, TrainLogEntry};

/// Optimization and augmentation knobs shared by expert and distillation
/// training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub poly_power: f64,
    pub copy_paste_enabled: bool,
    /// Maximum number of images composited per training sample (>= 1).
    pub n_max: usize,
    /// Random rescale factor range applied before cropping.
    pub scale_range: (f64, f64),
    /// Square training crop; must be divisible by 4.
    pub crop_size: usize,
    pub jitter_brightness: f64,
    pub jitter_contrast: f64,
    pub jitter_saturation: f64,
    /// Width of the segmentation network.
    pub base_channels: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.0005,
            weight_decay: 0.0002,
            batch_size: 8,
            max_iterations: 2000,
            poly_power: 0.9,
            copy_paste_enabled: true,
            n_max: 2,
            scale_range: (0.8, 1.25),
            crop_size: 48,
            jitter_brightness: 0.1,
            jitter_contrast: 0.1,
            jitter_saturation: 0.1,
            base_channels: 12,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::InvalidArgument("lr0 must be positive".into()));
        }
        if self.n_max < 1 {
            return Err(Error::InvalidArgument("n_max must be >= 1".into()));
        }
        if self.batch_size == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and max_iterations must be >= 1".into(),
            ));
        }
        if !(self.scale_range.0 > 0.0 && self.scale_range.1 >= self.scale_range.0) {
            return Err(Error::InvalidArgument(
                "scale_range must be positive with lo <= hi".into(),
            ));
        }
        if self.crop_size == 0 || self.crop_size % 4 != 0 {
            return Err(Error::InvalidArgument(
                "crop_size must be a positive multiple of 4".into(),
            ));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidArgument("base_channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Stable hash of the full config, recorded in model metadata.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

/// Poly learning-rate schedule: `lr0 * (1 - iter/max)^power`.
pub fn poly_lr(iteration: usize, config: &TrainConfig) -> Result<f64> {
    if iteration > config.max_iterations {
        return Err(Error::InvalidArgument(format!(
            "iteration {iteration} outside 0..={}",
            config.max_iterations
        )));
    }
    let frac = 1.0 - iteration as f64 / config.max_iterations as f64;
    Ok(config.lr0 * frac.powf(config.poly_power))
}
