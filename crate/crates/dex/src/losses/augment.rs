//! Implicit feature augmentation losses.
//!
//! The expected softmax loss under a Gaussian perturbation of the features,
//! ã ~ N(a, λΣ), is bounded from above in closed form: each competing logit
//! picks up a quadratic penalty (λ/2)(w_j−w_y)ᵀ Σ (w_j−w_y). Optimizing the
//! bound augments along the covariance directions without materializing any
//! perturbed samples. Three variants share the evaluation core:
//!
//! * domain-conditional Σ over all classes (`dex_loss`),
//! * domain-conditional Σ over a sampled class subset (`dexlite_loss`),
//! * class-conditional diagonal Σ (`isda_loss`).
//!
//! Σ is treated as a constant during differentiation; no gradient flows
//! into the covariance bank.

use crate::covbank::{CovarianceBank, KeySpace};
use crate::error::{Error, Result};
use crate::numerics::{dot, log_sum_exp, Matrix, SymMatrix, SymMode};

use super::{check_batch, ClassifierHead, LossAux, LossOutput};

struct AugmentedParams<'a> {
    head: &'a ClassifierHead,
    bank: &'a CovarianceBank,
    lambda: f64,
    epsilon: f64,
    /// Candidate classes forming the denominator; `None` means all classes.
    subset: Option<&'a [usize]>,
}

/// Shared evaluation core. `sigma_keys` selects the covariance per sample
/// (domain ids, or the labels themselves for the class-conditional variant).
fn augmented_softmax(
    features: &Matrix,
    labels: &[usize],
    sigma_keys: &[usize],
    params: AugmentedParams<'_>,
) -> Result<LossOutput> {
    let AugmentedParams {
        head,
        bank,
        lambda,
        epsilon,
        subset,
    } = params;
    check_batch(features, labels, head)?;
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "augmentation strength must be non-negative, got {lambda}"
        )));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "label smoothing must lie in [0,1), got {epsilon}"
        )));
    }
    if sigma_keys.len() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} covariance keys but {} samples",
            sigma_keys.len(),
            labels.len()
        )));
    }
    if bank.feature_dim() != head.feature_dim() {
        return Err(Error::DimMismatch(format!(
            "bank feature dim {} but classifier has {}",
            bank.feature_dim(),
            head.feature_dim()
        )));
    }
    let c = head.num_classes();
    if let Some(set) = subset {
        let mut seen = vec![false; c];
        for &j in set {
            if j >= c {
                return Err(Error::LabelOutOfRange {
                    label: j,
                    num_classes: c,
                });
            }
            if seen[j] {
                return Err(Error::InvalidArgument(format!(
                    "sampled class set contains {j} twice"
                )));
            }
            seen[j] = true;
        }
        for &y in labels {
            if !seen[y] {
                return Err(Error::MissingPositive(y));
            }
        }
    }

    let n = features.rows();
    let f = head.feature_dim();
    let inv_n = 1.0 / n as f64;
    let all_classes: Vec<usize> = (0..c).collect();
    let candidates: &[usize] = subset.unwrap_or(&all_classes);
    let m = candidates.len();
    let uniform = epsilon / m as f64;

    // One covariance per distinct key actually used by the batch.
    let mut sigmas: Vec<Option<SymMatrix>> = vec![None; bank.num_keys()];
    for &k in sigma_keys {
        if k >= bank.num_keys() {
            return Err(Error::KeyOutOfRange {
                key: k,
                num_keys: bank.num_keys(),
            });
        }
        if sigmas[k].is_none() {
            sigmas[k] = Some(bank.covariance(k)?);
        }
    }

    let mut value = 0.0;
    let mut grad_features = Matrix::zeros(n, f);
    let mut grad_weights = Matrix::zeros(c, f);
    let mut aux = LossAux::default();

    let mut logits = vec![0.0; m];
    let mut sigma_diffs: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut diff = vec![0.0; f];

    for i in 0..n {
        let a = features.row(i);
        let y = labels[i];
        let sigma = sigmas[sigma_keys[i]].as_ref().expect("cached above");
        let wy = head.weight(y);

        for (slot, &j) in candidates.iter().enumerate() {
            let wj = head.weight(j);
            for ((d, x), z) in diff.iter_mut().zip(wj).zip(wy) {
                *d = x - z;
            }
            let v = sigma.matvec(&diff);
            let q = dot(&diff, &v);
            aux.qf_evals += 1;
            logits[slot] = dot(wj, a) + 0.5 * lambda * q;
            sigma_diffs[slot] = v;
        }

        let lse = log_sum_exp(&logits)?;
        let mut target_dot = 0.0;
        for (slot, &j) in candidates.iter().enumerate() {
            let t = uniform + if j == y { 1.0 - epsilon } else { 0.0 };
            target_dot += t * logits[slot];
        }
        value += (lse - target_dot) * inv_n;

        for (slot, &j) in candidates.iter().enumerate() {
            let p = (logits[slot] - lse).exp();
            let t = uniform + if j == y { 1.0 - epsilon } else { 0.0 };
            let g = (p - t) * inv_n;

            let ga = grad_features.row_mut(i);
            for (dst, w) in ga.iter_mut().zip(head.weight(j)) {
                *dst += g * w;
            }
            {
                let gw = grad_weights.row_mut(j);
                for (dst, av) in gw.iter_mut().zip(a) {
                    *dst += g * av;
                }
            }
            if j != y && lambda != 0.0 {
                let lg = lambda * g;
                let v = &sigma_diffs[slot];
                {
                    let gw = grad_weights.row_mut(j);
                    for (dst, vv) in gw.iter_mut().zip(v) {
                        *dst += lg * vv;
                    }
                }
                let gy = grad_weights.row_mut(y);
                for (dst, vv) in gy.iter_mut().zip(v) {
                    *dst -= lg * vv;
                }
            }
        }
    }

    Ok(LossOutput {
        value,
        grad_features,
        grad_weights: Some(grad_weights),
        aux,
    })
}

/// Upper bound on the expected softmax loss under domain-conditional
/// Gaussian feature perturbation, full denominator over all classes.
pub fn dex_loss(
    features: &Matrix,
    labels: &[usize],
    domain_keys: &[usize],
    head: &ClassifierHead,
    bank: &CovarianceBank,
    lambda: f64,
    epsilon: f64,
) -> Result<LossOutput> {
    if bank.key_space() != KeySpace::Domain {
        return Err(Error::BankMismatch(
            "domain-conditional loss requires a domain-keyed bank".into(),
        ));
    }
    augmented_softmax(
        features,
        labels,
        domain_keys,
        AugmentedParams {
            head,
            bank,
            lambda,
            epsilon,
            subset: None,
        },
    )
}

/// Negative-sampled variant: the denominator runs only over the sampled
/// class set, which must contain every label in the batch. Weight gradients
/// are nonzero only on sampled rows.
pub fn dexlite_loss(
    features: &Matrix,
    labels: &[usize],
    domain_keys: &[usize],
    head: &ClassifierHead,
    bank: &CovarianceBank,
    lambda: f64,
    epsilon: f64,
    sampled_classes: &[usize],
) -> Result<LossOutput> {
    if bank.key_space() != KeySpace::Domain {
        return Err(Error::BankMismatch(
            "domain-conditional loss requires a domain-keyed bank".into(),
        ));
    }
    augmented_softmax(
        features,
        labels,
        domain_keys,
        AugmentedParams {
            head,
            bank,
            lambda,
            epsilon,
            subset: Some(sampled_classes),
        },
    )
}

/// Class-conditional variant: Σ comes from a diagonal class-keyed bank and
/// each sample uses the covariance of its own class.
pub fn isda_loss(
    features: &Matrix,
    labels: &[usize],
    head: &ClassifierHead,
    class_bank: &CovarianceBank,
    lambda: f64,
    epsilon: f64,
) -> Result<LossOutput> {
    if class_bank.key_space() != KeySpace::Class {
        return Err(Error::BankMismatch(
            "class-conditional loss requires a class-keyed bank".into(),
        ));
    }
    if class_bank.mode() != SymMode::Diagonal {
        return Err(Error::BankMismatch(
            "class-conditional loss requires a diagonal bank".into(),
        ));
    }
    augmented_softmax(
        features,
        labels,
        labels,
        AugmentedParams {
            head,
            bank: class_bank,
            lambda,
            epsilon,
            subset: None,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::softmax_ls;
    use rand::Rng;

    fn domain_bank_from(data: &Matrix, keys: &[usize], num_keys: usize, mode: SymMode) -> CovarianceBank {
        let mut bank = CovarianceBank::new(KeySpace::Domain, num_keys, data.cols(), mode);
        bank.update_with_batch(data, keys).unwrap();
        bank
    }

    fn random_setup(
        seed: u64,
        n: usize,
        c: usize,
        f: usize,
        d: usize,
    ) -> (Matrix, Vec<usize>, Vec<usize>, ClassifierHead, CovarianceBank) {
        let mut rng = crate::rng::derive_rng(seed, &[99]);
        let features = Matrix::from_fn(n, f, |_, _| rng.gen_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let domains: Vec<usize> = (0..n).map(|_| rng.gen_range(0..d)).collect();
        let head = ClassifierHead::new(Matrix::from_fn(c, f, |_, _| rng.gen_range(-1.0..1.0)));
        let stats = Matrix::from_fn(10 * d, f, |_, _| rng.gen_range(-1.0..1.0));
        let stat_keys: Vec<usize> = (0..10 * d).map(|i| i % d).collect();
        let bank = domain_bank_from(&stats, &stat_keys, d, SymMode::Full);
        (features, labels, domains, head, bank)
    }

    #[test]
    fn lambda_zero_reduces_to_softmax() {
        for eps in [0.0, 0.1] {
            let (features, labels, domains, head, bank) = random_setup(41, 6, 9, 5, 3);
            let dex = dex_loss(&features, &labels, &domains, &head, &bank, 0.0, eps).unwrap();
            let soft = softmax_ls(&features, &labels, &head, eps).unwrap();
            assert!((dex.value - soft.value).abs() <= 1e-12);
            for (a, b) in dex
                .grad_features
                .data()
                .iter()
                .zip(soft.grad_features.data())
            {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn scalar_golden_value() {
        // C=2, f=1, w = (1, −1), a = 0, y = 1, Σ = 1, λ = 1 → ln(1+e²)
        let head = ClassifierHead::new(Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap());
        let features = Matrix::from_rows(&[vec![0.0]]).unwrap();
        // bank whose lone domain has unit variance: points −1, 1 → μ=0, σ²=1
        let stats = Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let bank = domain_bank_from(&stats, &[0, 0], 1, SymMode::Full);
        let out = dex_loss(&features, &[1], &[0], &head, &bank, 1.0, 0.0).unwrap();
        let expect = 2.126_928_011_042_972_7;
        assert!(
            (out.value - expect).abs() <= 1e-9,
            "got {} expected {}",
            out.value,
            expect
        );
        assert_eq!(out.aux.qf_evals, 2);
    }

    #[test]
    fn dexlite_full_set_equals_dex() {
        let (features, labels, domains, head, bank) = random_setup(42, 8, 11, 6, 3);
        let all: Vec<usize> = (0..11).collect();
        let lite =
            dexlite_loss(&features, &labels, &domains, &head, &bank, 2.5, 0.1, &all).unwrap();
        let full = dex_loss(&features, &labels, &domains, &head, &bank, 2.5, 0.1).unwrap();
        assert!((lite.value - full.value).abs() <= 1e-12);
        for (a, b) in lite
            .grad_weights
            .as_ref()
            .unwrap()
            .data()
            .iter()
            .zip(full.grad_weights.as_ref().unwrap().data())
        {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn dexlite_positives_only_single_sample_is_zero() {
        let (features, _, domains, head, bank) = random_setup(43, 1, 5, 4, 2);
        let labels = vec![3usize];
        let out = dexlite_loss(
            &features, &labels, &domains[..1], &head, &bank, 3.0, 0.0, &[3],
        )
        .unwrap();
        assert!(out.value.abs() <= 1e-15);
        assert_eq!(out.aux.qf_evals, 1);
    }

    #[test]
    fn dexlite_value_never_exceeds_full() {
        let (features, labels, domains, head, bank) = random_setup(44, 10, 100, 6, 3);
        let mut sampled: Vec<usize> = labels.clone();
        sampled.sort_unstable();
        sampled.dedup();
        for extra in [0usize, 17, 33, 58, 71, 90, 99] {
            if !sampled.contains(&extra) {
                sampled.push(extra);
            }
        }
        sampled.sort_unstable();
        let lite =
            dexlite_loss(&features, &labels, &domains, &head, &bank, 1.5, 0.0, &sampled).unwrap();
        let full = dex_loss(&features, &labels, &domains, &head, &bank, 1.5, 0.0).unwrap();
        assert!(lite.value <= full.value + 1e-12);
    }

    #[test]
    fn dexlite_missing_positive_errors() {
        let (features, labels, domains, head, bank) = random_setup(45, 4, 9, 5, 2);
        let sampled: Vec<usize> = (0..9).filter(|j| *j != labels[0]).collect();
        let err = dexlite_loss(
            &features, &labels, &domains, &head, &bank, 1.0, 0.0, &sampled,
        );
        assert!(matches!(err, Err(Error::MissingPositive(_))));
    }

    #[test]
    fn dexlite_grad_zero_outside_sampled_rows() {
        let (features, labels, domains, head, bank) = random_setup(46, 6, 20, 5, 2);
        let mut sampled: Vec<usize> = labels.clone();
        sampled.sort_unstable();
        sampled.dedup();
        let out =
            dexlite_loss(&features, &labels, &domains, &head, &bank, 2.0, 0.1, &sampled).unwrap();
        let gw = out.grad_weights.unwrap();
        for j in 0..20 {
            let in_set = sampled.contains(&j);
            let row_norm: f64 = gw.row(j).iter().map(|x| x * x).sum();
            if !in_set {
                assert_eq!(row_norm, 0.0, "row {j} should be untouched");
            }
        }
        assert_eq!(out.aux.qf_evals, 6 * sampled.len() as u64);
    }

    #[test]
    fn key_space_mismatch_errors() {
        let (features, labels, _, head, _) = random_setup(47, 4, 6, 5, 2);
        let class_bank = CovarianceBank::new(KeySpace::Class, 6, 5, SymMode::Diagonal);
        let err = dex_loss(&features, &labels, &labels, &head, &class_bank, 1.0, 0.0);
        assert!(matches!(err, Err(Error::BankMismatch(_))));
        let domain_bank = CovarianceBank::new(KeySpace::Domain, 2, 5, SymMode::Full);
        let err = isda_loss(&features, &labels, &head, &domain_bank, 1.0, 0.0);
        assert!(matches!(err, Err(Error::BankMismatch(_))));
    }

    #[test]
    fn negative_lambda_errors() {
        let (features, labels, domains, head, bank) = random_setup(48, 3, 5, 4, 2);
        assert!(dex_loss(&features, &labels, &domains, &head, &bank, -0.5, 0.0).is_err());
    }

    #[test]
    fn isda_matches_naive_loop_oracle() {
        let mut rng = crate::rng::derive_rng(49, &[7]);
        let (n, c, f) = (5, 6, 4);
        let features = Matrix::from_fn(n, f, |_, _| rng.gen_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let head = ClassifierHead::new(Matrix::from_fn(c, f, |_, _| rng.gen_range(-1.0..1.0)));
        let mut class_bank = CovarianceBank::new(KeySpace::Class, c, f, SymMode::Diagonal);
        let stats = Matrix::from_fn(8 * c, f, |_, _| rng.gen_range(-1.0..1.0));
        let stat_keys: Vec<usize> = (0..8 * c).map(|i| i % c).collect();
        class_bank.update_with_batch(&stats, &stat_keys).unwrap();
        let lambda = 1.7;

        let out = isda_loss(&features, &labels, &head, &class_bank, lambda, 0.0).unwrap();

        // naive per-sample loop over a dense view of the diagonal covariances
        let mut expect = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let sigma = class_bank.covariance(y).unwrap();
            let mut denom = 0.0;
            for j in 0..c {
                let mut q = 0.0;
                for k in 0..f {
                    let dk = head.weight(j)[k] - head.weight(y)[k];
                    q += dk * sigma.get(k, k) * dk;
                }
                denom += (dot(head.weight(j), features.row(i)) + 0.5 * lambda * q).exp();
            }
            expect += -((dot(head.weight(y), features.row(i))).exp() / denom).ln();
        }
        expect /= n as f64;
        assert!((out.value - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn isda_zero_covariance_equals_softmax_at_any_lambda() {
        let (features, labels, _, head, _) = random_setup(50, 5, 6, 4, 2);
        let empty = CovarianceBank::new(KeySpace::Class, 6, 4, SymMode::Diagonal);
        let out = isda_loss(&features, &labels, &head, &empty, 7.5, 0.1).unwrap();
        let soft = softmax_ls(&features, &labels, &head, 0.1).unwrap();
        assert!((out.value - soft.value).abs() <= 1e-12);
    }

    #[test]
    fn monotone_in_lambda() {
        let (features, labels, domains, head, bank) = random_setup(51, 8, 10, 6, 3);
        let mut prev = f64::NEG_INFINITY;
        for lambda in [0.0, 1.0, 2.0, 4.0, 7.5] {
            let v = dex_loss(&features, &labels, &domains, &head, &bank, lambda, 0.0)
                .unwrap()
                .value;
            assert!(v + 1e-12 >= prev, "loss decreased: {prev} -> {v} at λ={lambda}");
            prev = v;
        }
    }

    #[test]
    fn qf_count_is_n_times_c() {
        let (features, labels, domains, head, bank) = random_setup(52, 7, 9, 5, 3);
        let out = dex_loss(&features, &labels, &domains, &head, &bank, 1.0, 0.0).unwrap();
        assert_eq!(out.aux.qf_evals, 7 * 9);
    }

    #[test]
    fn batch_permutation_invariance() {
        let (features, labels, domains, head, bank) = random_setup(53, 6, 8, 5, 3);
        let out = dex_loss(&features, &labels, &domains, &head, &bank, 2.0, 0.1).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let pf = Matrix::from_fn(6, 5, |i, j| features.get(perm[i], j));
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let pd: Vec<usize> = perm.iter().map(|&i| domains[i]).collect();
        let pout = dex_loss(&pf, &pl, &pd, &head, &bank, 2.0, 0.1).unwrap();
        assert!((out.value - pout.value).abs() <= 1e-12);
        for (i, &src) in perm.iter().enumerate() {
            for k in 0..5 {
                assert!(
                    (out.grad_features.get(src, k) - pout.grad_features.get(i, k)).abs() <= 1e-12
                );
            }
        }
    }
}
