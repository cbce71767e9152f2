//! Label-smoothed softmax cross-entropy over a bias-free classifier.

use crate::error::{Error, Result};
use crate::numerics::{dot, log_sum_exp, Matrix};

use super::{check_batch, ClassifierHead, LossAux, LossOutput};

/// Mean smoothed cross-entropy over the batch. The target distribution puts
/// 1−ε on the true class plus ε/C spread over every class; ε = 0 recovers
/// plain softmax cross-entropy exactly.
pub fn softmax_ls(
    features: &Matrix,
    labels: &[usize],
    head: &ClassifierHead,
    epsilon: f64,
) -> Result<LossOutput> {
    check_batch(features, labels, head)?;
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "label smoothing must lie in [0,1), got {epsilon}"
        )));
    }
    let n = features.rows();
    let c = head.num_classes();
    let f = head.feature_dim();
    let inv_n = 1.0 / n as f64;

    let mut value = 0.0;
    let mut grad_features = Matrix::zeros(n, f);
    let mut grad_weights = Matrix::zeros(c, f);
    let mut logits = vec![0.0; c];

    for (i, &y) in labels.iter().enumerate() {
        let a = features.row(i);
        for j in 0..c {
            logits[j] = dot(head.weight(j), a);
        }
        let lse = log_sum_exp(&logits)?;
        // value: lse − Σ_j t_j z_j with t_j = ε/C + (1−ε)·1[j=y]
        let uniform = epsilon / c as f64;
        let mut target_dot = (1.0 - epsilon) * logits[y];
        if epsilon > 0.0 {
            target_dot += uniform * logits.iter().sum::<f64>();
        }
        value += (lse - target_dot) * inv_n;

        for j in 0..c {
            let p = (logits[j] - lse).exp();
            let t = uniform + if j == y { 1.0 - epsilon } else { 0.0 };
            let g = (p - t) * inv_n;
            let ga = grad_features.row_mut(i);
            for (dst, w) in ga.iter_mut().zip(head.weight(j)) {
                *dst += g * w;
            }
            let gw = grad_weights.row_mut(j);
            for (dst, av) in gw.iter_mut().zip(a) {
                *dst += g * av;
            }
        }
    }

    Ok(LossOutput {
        value,
        grad_features,
        grad_weights: Some(grad_weights),
        aux: LossAux::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn head_from(rows: &[Vec<f64>]) -> ClassifierHead {
        ClassifierHead::new(Matrix::from_rows(rows).unwrap())
    }

    #[test]
    fn zero_weights_give_uniform_logits() {
        let head = head_from(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let features = Matrix::from_rows(&[vec![0.3, -1.2], vec![5.0, 2.0]]).unwrap();
        let out = softmax_ls(&features, &[0, 1], &head, 0.0).unwrap();
        assert!((out.value - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(out.grad_features.data().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn scalar_closed_form() {
        // C=2, f=1, w=(1,−1), a=3, y=0, ε=0 → ln(1+e^{−6})
        let head = head_from(&[vec![1.0], vec![-1.0]]);
        let features = Matrix::from_rows(&[vec![3.0]]).unwrap();
        let out = softmax_ls(&features, &[0], &head, 0.0).unwrap();
        let expect = (1.0 + (-6.0_f64).exp()).ln();
        assert!((out.value - expect).abs() < 1e-15);
    }

    #[test]
    fn matches_naive_ce_at_epsilon_zero() {
        let mut rng = crate::rng::derive_rng(31, &[0]);
        let (n, c, f) = (5, 7, 4);
        let features = Matrix::from_fn(n, f, |_, _| rng.gen_range(-1.5..1.5));
        let head = ClassifierHead::new(Matrix::from_fn(c, f, |_, _| rng.gen_range(-1.0..1.0)));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let out = softmax_ls(&features, &labels, &head, 0.0).unwrap();
        // naive per-sample oracle
        let mut expect = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let logits: Vec<f64> = (0..c).map(|j| dot(head.weight(j), features.row(i))).collect();
            let denom: f64 = logits.iter().map(|z| z.exp()).sum();
            expect += -(logits[y].exp() / denom).ln();
        }
        expect /= n as f64;
        assert!((out.value - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn label_out_of_range_errors() {
        let head = head_from(&[vec![1.0], vec![-1.0]]);
        let features = Matrix::from_rows(&[vec![3.0]]).unwrap();
        assert!(softmax_ls(&features, &[2], &head, 0.0).is_err());
    }
}
