//! Loss functions with analytic gradients: label-smoothed softmax over a
//! bias-free classifier, the augmented softmax upper bound on the expected
//! loss under Gaussian feature perturbation (domain-conditional, its
//! negative-sampled variant, and the class-conditional variant), batch-hard
//! triplet, center loss, the augmentation-strength ramp, and the combined
//! training objectives including multi-branch aggregation.

mod augment;
mod combined;
mod metric;
mod schedule;
mod softmax;

pub use augment::{dex_loss, dexlite_loss, isda_loss};
pub use combined::{
    branch_loss, combined_loss, BranchAggregation, BranchEnsemble, BranchLossOutput,
    CombinedInputs, CombinedOutput, LossParts, TrainMode,
};
pub use metric::{center_loss, triplet_loss, update_centroids, Centroids};
pub use schedule::{AugmentationSchedule, LossWeights};
pub use softmax::softmax_ls;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Bias-free classifier weights, one row per person identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    weights: Matrix,
}

impl ClassifierHead {
    pub fn new(weights: Matrix) -> Self {
        ClassifierHead { weights }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weight(&self, class: usize) -> &[f64] {
        self.weights.row(class)
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }
}

/// Diagnostics attached to a loss evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LossAux {
    /// Quadratic-form evaluations performed (one per sample/candidate pair).
    pub qf_evals: u64,
    /// Anchors with a strictly positive hinge (triplet only).
    pub active_anchors: usize,
}

impl LossAux {
    pub fn absorb(&mut self, other: &LossAux) {
        self.qf_evals += other.qf_evals;
        self.active_anchors += other.active_anchors;
    }
}

/// Scalar loss plus analytic gradients.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    /// Per-sample gradients, one row per feature vector.
    pub grad_features: Matrix,
    /// Gradient with respect to the classifier weights; absent for losses
    /// that never touch the head.
    pub grad_weights: Option<Matrix>,
    pub aux: LossAux,
}

pub(crate) fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    for &l in labels {
        if l >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                num_classes,
            });
        }
    }
    Ok(())
}

pub(crate) fn check_batch(features: &Matrix, labels: &[usize], head: &ClassifierHead) -> Result<()> {
    if features.rows() == 0 {
        return Err(Error::EmptyInput("loss over an empty batch"));
    }
    if features.rows() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if features.cols() != head.feature_dim() {
        return Err(Error::DimMismatch(format!(
            "feature dim {} but classifier expects {}",
            features.cols(),
            head.feature_dim()
        )));
    }
    check_labels(labels, head.num_classes())
}
