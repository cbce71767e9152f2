//! Metric-learning losses: batch-hard triplet and center loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{euclidean, Matrix};

use super::{check_labels, LossAux, LossOutput};

/// Batch-hard triplet loss with Euclidean distances: per anchor, the
/// farthest same-label sample and the nearest different-label sample form
/// the triplet; hinge at the margin; mean over anchors. The subgradient at
/// an exactly-zero hinge is zero.
pub fn triplet_loss(features: &Matrix, labels: &[usize], margin: f64) -> Result<LossOutput> {
    let n = features.rows();
    if n == 0 {
        return Err(Error::EmptyInput("triplet loss over an empty batch"));
    }
    if labels.len() != n {
        return Err(Error::DimMismatch(format!(
            "{} feature rows but {} labels",
            n,
            labels.len()
        )));
    }
    if margin < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "triplet margin must be non-negative, got {margin}"
        )));
    }
    // every label needs a positive partner and at least one negative
    let distinct: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::InvalidArgument(
            "triplet loss needs at least two distinct labels in the batch".into(),
        ));
    }
    for &l in &distinct {
        if labels.iter().filter(|&&x| x == l).count() < 2 {
            return Err(Error::InvalidArgument(format!(
                "label {l} has a single sample; every label needs at least two"
            )));
        }
    }

    let f = features.cols();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(features.row(i), features.row(j));
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(n, f);
    let mut active = 0;

    for a in 0..n {
        let mut hardest_pos = (f64::NEG_INFINITY, usize::MAX);
        let mut hardest_neg = (f64::INFINITY, usize::MAX);
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = dist[a * n + j];
            if labels[j] == labels[a] {
                if d > hardest_pos.0 {
                    hardest_pos = (d, j);
                }
            } else if d < hardest_neg.0 {
                hardest_neg = (d, j);
            }
        }
        let (dp, p) = hardest_pos;
        let (dn, ng) = hardest_neg;
        let hinge = dp - dn + margin;
        if hinge > 0.0 {
            active += 1;
            value += hinge * inv_n;
            // d‖x_a−x_p‖/dx = (x_a−x_p)/d, zero direction when the pair coincides
            if dp > 0.0 {
                let s = inv_n / dp;
                for k in 0..f {
                    let u = (features.get(a, k) - features.get(p, k)) * s;
                    *grad.row_mut(a).get_mut(k).unwrap() += u;
                    *grad.row_mut(p).get_mut(k).unwrap() -= u;
                }
            }
            if dn > 0.0 {
                let s = inv_n / dn;
                for k in 0..f {
                    let u = (features.get(a, k) - features.get(ng, k)) * s;
                    *grad.row_mut(a).get_mut(k).unwrap() -= u;
                    *grad.row_mut(ng).get_mut(k).unwrap() += u;
                }
            }
        }
    }

    Ok(LossOutput {
        value,
        grad_features: grad,
        grad_weights: None,
        aux: LossAux {
            qf_evals: 0,
            active_anchors: active,
        },
    })
}

/// Per-class feature centroids, pulled toward batch features by a
/// count-normalized update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    centers: Matrix,
    update_rate: f64,
}

impl Centroids {
    pub fn new(num_classes: usize, feature_dim: usize, update_rate: f64) -> Result<Self> {
        if !(update_rate > 0.0 && update_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "centroid update rate must lie in (0,1], got {update_rate}"
            )));
        }
        Ok(Centroids {
            centers: Matrix::zeros(num_classes, feature_dim),
            update_rate,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.centers.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn center(&self, class: usize) -> &[f64] {
        self.centers.row(class)
    }

    pub fn centers_mut(&mut self) -> &mut Matrix {
        &mut self.centers
    }
}

/// Sum over the batch of squared distances to the class centroid.
pub fn center_loss(features: &Matrix, labels: &[usize], centroids: &Centroids) -> Result<LossOutput> {
    let n = features.rows();
    if n == 0 {
        return Err(Error::EmptyInput("center loss over an empty batch"));
    }
    if labels.len() != n {
        return Err(Error::DimMismatch(format!(
            "{} feature rows but {} labels",
            n,
            labels.len()
        )));
    }
    if features.cols() != centroids.feature_dim() {
        return Err(Error::DimMismatch(format!(
            "feature dim {} but centroids have {}",
            features.cols(),
            centroids.feature_dim()
        )));
    }
    check_labels(labels, centroids.num_classes())?;

    let f = features.cols();
    let mut value = 0.0;
    let mut grad = Matrix::zeros(n, f);
    for (i, &y) in labels.iter().enumerate() {
        let c = centroids.center(y);
        let row = grad.row_mut(i);
        for k in 0..f {
            let d = features.get(i, k) - c[k];
            value += d * d;
            row[k] = 2.0 * d;
        }
    }

    Ok(LossOutput {
        value,
        grad_features: grad,
        grad_weights: None,
        aux: LossAux::default(),
    })
}

/// c_y ← c_y − α · Σ_{i: y_i = y} (c_y − x_i) / (1 + count_y).
pub fn update_centroids(centroids: &mut Centroids, features: &Matrix, labels: &[usize]) -> Result<()> {
    if features.rows() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if features.cols() != centroids.feature_dim() {
        return Err(Error::DimMismatch("centroid update dim mismatch".into()));
    }
    check_labels(labels, centroids.num_classes())?;

    let f = centroids.feature_dim();
    let mut counts = vec![0usize; centroids.num_classes()];
    let mut sums = vec![0.0; centroids.num_classes() * f];
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        for k in 0..f {
            sums[y * f + k] += features.get(i, k);
        }
    }
    let alpha = centroids.update_rate;
    for y in 0..centroids.num_classes() {
        if counts[y] == 0 {
            continue;
        }
        let cnt = counts[y] as f64;
        let row = centroids.centers.row_mut(y);
        for k in 0..f {
            let delta = cnt * row[k] - sums[y * f + k];
            row[k] -= alpha * delta / (1.0 + cnt);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separated_clusters_have_zero_loss() {
        // two tight clusters 10 apart, margin 0.3
        let features = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![10.0, 0.0],
            vec![10.0, 0.0],
        ])
        .unwrap();
        let out = triplet_loss(&features, &[0, 0, 1, 1], 0.3).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad_features.data().iter().all(|g| *g == 0.0));
        assert_eq!(out.aux.active_anchors, 0);
    }

    #[test]
    fn hand_arithmetic_hinge() {
        // positives at distance 2, negatives at distance 1, margin 0.3 → hinge 1.3
        let features = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, 1.0],
            vec![2.0, 1.0],
        ])
        .unwrap();
        // pid 0: rows 0,1; pid 1: rows 2,3. pos dist 2, neg dist 1 for each anchor.
        let out = triplet_loss(&features, &[0, 0, 1, 1], 0.3).unwrap();
        assert!((out.value - 1.3).abs() < 1e-12);
        assert_eq!(out.aux.active_anchors, 4);
    }

    #[test]
    fn matches_bruteforce_mining_oracle() {
        let mut rng = crate::rng::derive_rng(61, &[0]);
        let (n, f) = (16, 5);
        let labels: Vec<usize> = (0..n).map(|i| i / 4).collect();
        let features = Matrix::from_fn(n, f, |_, _| rng.gen_range(-2.0..2.0));
        let out = triplet_loss(&features, &labels, 0.3).unwrap();

        // brute force: all-pairs hardest mining, recomputed from scratch
        let mut expect = 0.0;
        for a in 0..n {
            let mut dp: f64 = f64::NEG_INFINITY;
            let mut dn: f64 = f64::INFINITY;
            for j in 0..n {
                if j == a {
                    continue;
                }
                let d = euclidean(features.row(a), features.row(j));
                if labels[j] == labels[a] {
                    dp = dp.max(d);
                } else {
                    dn = dn.min(d);
                }
            }
            expect += (dp - dn + 0.3).max(0.0);
        }
        expect /= n as f64;
        assert!((out.value - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn degenerate_batches_error() {
        let features = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert!(triplet_loss(&features, &[0, 0, 1], 0.3).is_err()); // label 1 singleton
        assert!(triplet_loss(&features, &[0, 0, 0], 0.3).is_err()); // single label
    }

    #[test]
    fn center_loss_zero_at_centroids() {
        let mut cents = Centroids::new(2, 2, 0.5).unwrap();
        cents.centers_mut().set(0, 0, 1.0);
        cents.centers_mut().set(1, 1, -2.0);
        let features = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -2.0]]).unwrap();
        let out = center_loss(&features, &[0, 1], &cents).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad_features.data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn center_loss_hand_arithmetic() {
        let mut cents = Centroids::new(1, 2, 0.5).unwrap();
        cents.centers_mut().set(0, 0, 1.0);
        let features = Matrix::from_rows(&[vec![3.0, 0.0]]).unwrap();
        let out = center_loss(&features, &[0], &cents).unwrap();
        assert!((out.value - 4.0).abs() < 1e-15);
        assert_eq!(out.grad_features.row(0), &[4.0, 0.0]);
    }

    #[test]
    fn centroid_update_moves_to_midpoint_at_full_rate() {
        let mut cents = Centroids::new(1, 2, 1.0).unwrap();
        cents.centers_mut().set(0, 0, 2.0);
        cents.centers_mut().set(0, 1, 4.0);
        let features = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        update_centroids(&mut cents, &features, &[0]).unwrap();
        assert_eq!(cents.center(0), &[1.0, 2.0]);
    }

    #[test]
    fn label_out_of_range_errors() {
        let cents = Centroids::new(2, 1, 0.5).unwrap();
        let features = Matrix::from_rows(&[vec![0.0]]).unwrap();
        assert!(center_loss(&features, &[5], &cents).is_err());
    }
}
