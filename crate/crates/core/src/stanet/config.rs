use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groundtruth::{AugmentConfig, KernelConfig};
use crate::tensorcore::{LrPhase, LrSchedule};

/// Pyramid depth: backbone groups, fusion levels and supervised scales.
pub const SCALES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Output channels of the four backbone groups.
    pub channels: [usize; SCALES],
    /// Convolutions per backbone group.
    pub group_depth: [usize; SCALES],
    /// Channels of the temporal feature and of every fused scale.
    pub fuse_channels: usize,
    /// Frame gap between the current frame and its temporal partner.
    pub tau: usize,
    pub use_multiscale: bool,
    pub use_localization_head: bool,
    pub use_association_head: bool,
    pub use_attention: bool,
    pub embedding_dim: usize,
    /// Localization target width at the finest scale, in pixels.
    pub sigma_loc: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: [16, 32, 48, 64],
            group_depth: [2, 2, 3, 3],
            fuse_channels: 16,
            tau: 1,
            use_multiscale: true,
            use_localization_head: true,
            use_association_head: true,
            use_attention: true,
            embedding_dim: 16,
            sigma_loc: 3.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.group_depth.contains(&0) || self.fuse_channels == 0 {
            return Err(Error::invalid(
                "channel counts and group depths must be positive",
            ));
        }
        if self.tau == 0 {
            return Err(Error::invalid("tau must be >= 1"));
        }
        if self.embedding_dim < 2 {
            return Err(Error::invalid("embedding dimension must be >= 2"));
        }
        if !(self.sigma_loc > 0.0 && self.sigma_loc.is_finite()) {
            return Err(Error::invalid("sigma_loc must be positive"));
        }
        Ok(())
    }

    /// Input extents must survive three 2×2 poolings.
    pub fn check_input(&self, width: usize, height: usize) -> Result<()> {
        let f = 1 << (SCALES - 1);
        if width == 0 || height == 0 || !width.is_multiple_of(f) || !height.is_multiple_of(f) {
            return Err(Error::invalid(format!(
                "input {width}x{height} must be a positive multiple of {f}"
            )));
        }
        Ok(())
    }

    /// Number of supervised scales in the output pyramids.
    pub fn output_scales(&self) -> usize {
        if self.use_multiscale {
            SCALES
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_den: f64,
    pub lambda_loc: f64,
    pub lambda_ass: f64,
    /// Per-scale weights, coarsest first.
    pub omega: [f64; SCALES],
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_den: 1.0,
            lambda_loc: 1e-4,
            lambda_ass: 10.0,
            omega: [0.0125, 0.125, 0.5, 0.5],
            margin: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_den,
            self.lambda_loc,
            self.lambda_ass,
            self.margin,
        ];
        if all
            .iter()
            .chain(&self.omega)
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::invalid("loss weights must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Everything a training run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub batch_size: usize,
    /// Frame pairs drawn per epoch.
    pub samples_per_epoch: usize,
    pub augment: AugmentConfig,
    pub kernel: KernelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            schedule: LrSchedule::reference(),
            seed: 0,
            batch_size: 9,
            samples_per_epoch: 72,
            augment: AugmentConfig::default(),
            kernel: KernelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Settings sized for a CPU: 64×64 crops, small batches and thirty
    /// epochs, twenty at 1e-3 then ten at 1e-4 to settle the count.
    pub fn desk() -> Self {
        TrainConfig {
            schedule: LrSchedule {
                phases: vec![
                    LrPhase {
                        epochs: 20,
                        lr: 1e-3,
                    },
                    LrPhase {
                        epochs: 10,
                        lr: 1e-4,
                    },
                ],
            },
            batch_size: 4,
            samples_per_epoch: 96,
            augment: AugmentConfig {
                crop: Some((64, 64)),
                ..AugmentConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.schedule.validate()?;
        if self.batch_size == 0 || self.samples_per_epoch == 0 {
            return Err(Error::invalid(
                "batch size and samples per epoch must be positive",
            ));
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let w = LossWeights::default();
        assert_eq!(
            (w.lambda_den, w.lambda_loc, w.lambda_ass, w.margin),
            (1.0, 0.0001, 10.0, 0.2)
        );
        assert_eq!(w.omega, [0.0125, 0.125, 0.5, 0.5]);
        assert_eq!(TrainConfig::default().batch_size, 9);
        assert_eq!(ModelConfig::default().channels, [16, 32, 48, 64]);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: TrainConfig =
            serde_json::from_str(r#"{"seed": 4, "model": {"use_multiscale": false}}"#).unwrap();
        assert_eq!(cfg.seed, 4);
        assert!(!cfg.model.use_multiscale);
        assert_eq!(cfg.model.embedding_dim, 16);
        let bad: TrainConfig = serde_json::from_str(r#"{"model": {"tau": 0}}"#).unwrap();
        assert!(bad.validate().is_err());
    }
}
