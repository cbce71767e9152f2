//! Augmentation-strength ramp and loss weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear ramp of the augmentation strength over training: zero at the
/// first epoch, the configured maximum at the last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSchedule {
    lambda_max: f64,
    total_epochs: usize,
}

impl AugmentationSchedule {
    pub fn new(lambda_max: f64, total_epochs: usize) -> Result<Self> {
        if lambda_max < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda must be non-negative, got {lambda_max}"
            )));
        }
        if total_epochs < 2 {
            return Err(Error::InvalidArgument(format!(
                "the ramp needs at least two epochs, got {total_epochs}"
            )));
        }
        Ok(AugmentationSchedule {
            lambda_max,
            total_epochs,
        })
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn total_epochs(&self) -> usize {
        self.total_epochs
    }

    /// λ_t = (t−1)/(T−1) · λ for t in [1, T].
    pub fn lambda_at(&self, epoch: usize) -> Result<f64> {
        if epoch < 1 || epoch > self.total_epochs {
            return Err(Error::InvalidArgument(format!(
                "epoch {epoch} outside [1, {}]",
                self.total_epochs
            )));
        }
        Ok((epoch - 1) as f64 / (self.total_epochs - 1) as f64 * self.lambda_max)
    }
}

/// Coefficients of the combined objective plus the triplet margin and the
/// label-smoothing mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub beta_soft: f64,
    pub beta_tri: f64,
    pub beta_cen: f64,
    pub margin: f64,
    pub smoothing: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta_soft: 1.0,
            beta_tri: 1.0,
            beta_cen: 5e-4,
            margin: 0.3,
            smoothing: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta_soft", self.beta_soft),
            ("beta_tri", self.beta_tri),
            ("beta_cen", self.beta_cen),
            ("margin", self.margin),
            ("smoothing", self.smoothing),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite")));
            }
        }
        if self.margin < 0.0 {
            return Err(Error::InvalidArgument("margin must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::InvalidArgument(
                "smoothing must lie in [0,1)".into(),
            ));
        }
        Ok(())
    }
}
