//! Streaming per-key covariance estimation.
//!
//! A bank keeps, for every key (domain id, or class id for the
//! class-conditional variant), a count, a mean, and a scatter matrix
//! M = Σ (x−μ)(x−μ)ᵀ. Batches fold in through the exact two-group merge,
//! so for any partitioning of the data the result matches a single pass
//! over everything seen so far. The reported covariance is M/n (population
//! convention); keys with fewer than two samples report the zero matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, SymMatrix, SymMode};

/// What the bank keys covariances by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeySpace {
    Domain,
    Class,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KeyStats {
    count: u64,
    mean: Vec<f64>,
    scatter: SymMatrix,
}

impl KeyStats {
    fn new(dim: usize, mode: SymMode) -> Self {
        KeyStats {
            count: 0,
            mean: vec![0.0; dim],
            scatter: SymMatrix::zeros(dim, mode),
        }
    }

    /// Two-group merge: fold (m, mean_b, scatter_b) into self.
    fn merge(&mut self, m: u64, mean_b: &[f64], scatter_b: &SymMatrix) {
        if m == 0 {
            return;
        }
        let n = self.count;
        if n == 0 {
            self.count = m;
            self.mean.copy_from_slice(mean_b);
            self.scatter = scatter_b.clone();
            return;
        }
        let total = n + m;
        let (nf, mf, tf) = (n as f64, m as f64, total as f64);
        let delta: Vec<f64> = self
            .mean
            .iter()
            .zip(mean_b)
            .map(|(a, b)| a - b)
            .collect();
        for (mu, &mb) in self.mean.iter_mut().zip(mean_b) {
            *mu = (nf * *mu + mf * mb) / tf;
        }
        self.scatter.add_scaled(scatter_b, 1.0);
        self.scatter.add_scaled_outer(&delta, nf * mf / tf);
        self.count = total;
    }
}

/// Per-key streaming mean/covariance store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceBank {
    key_space: KeySpace,
    feature_dim: usize,
    mode: SymMode,
    keys: Vec<KeyStats>,
}

impl CovarianceBank {
    pub fn new(key_space: KeySpace, num_keys: usize, feature_dim: usize, mode: SymMode) -> Self {
        CovarianceBank {
            key_space,
            feature_dim,
            mode,
            keys: (0..num_keys).map(|_| KeyStats::new(feature_dim, mode)).collect(),
        }
    }

    pub fn key_space(&self) -> KeySpace {
        self.key_space
    }

    pub fn num_keys(&self) -> usize {
        self.keys.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn mode(&self) -> SymMode {
        self.mode
    }

    pub fn count(&self, key: usize) -> Result<u64> {
        self.check_key(key)?;
        Ok(self.keys[key].count)
    }

    pub fn total_count(&self) -> u64 {
        self.keys.iter().map(|k| k.count).sum()
    }

    pub fn mean(&self, key: usize) -> Result<&[f64]> {
        self.check_key(key)?;
        Ok(&self.keys[key].mean)
    }

    fn check_key(&self, key: usize) -> Result<()> {
        if key >= self.keys.len() {
            return Err(Error::KeyOutOfRange {
                key,
                num_keys: self.keys.len(),
            });
        }
        Ok(())
    }

    /// Fold a batch of feature vectors into the bank, one key per row.
    pub fn update_with_batch(&mut self, features: &Matrix, keys: &[usize]) -> Result<()> {
        if features.rows() != keys.len() {
            return Err(Error::DimMismatch(format!(
                "{} feature rows but {} keys",
                features.rows(),
                keys.len()
            )));
        }
        if features.cols() != self.feature_dim {
            return Err(Error::DimMismatch(format!(
                "feature dim {} but bank expects {}",
                features.cols(),
                self.feature_dim
            )));
        }
        for &k in keys {
            self.check_key(k)?;
        }

        // Group rows per key, then merge each group's batch statistics.
        let mut per_key: Vec<Vec<usize>> = vec![Vec::new(); self.keys.len()];
        for (row, &k) in keys.iter().enumerate() {
            per_key[k].push(row);
        }
        for (k, rows) in per_key.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let m = rows.len();
            let mut mean_b = vec![0.0; self.feature_dim];
            for &r in rows {
                for (acc, v) in mean_b.iter_mut().zip(features.row(r)) {
                    *acc += v;
                }
            }
            for v in &mut mean_b {
                *v /= m as f64;
            }
            let mut scatter_b = SymMatrix::zeros(self.feature_dim, self.mode);
            let mut centered = vec![0.0; self.feature_dim];
            for &r in rows {
                for ((c, v), mu) in centered.iter_mut().zip(features.row(r)).zip(&mean_b) {
                    *c = v - mu;
                }
                scatter_b.add_scaled_outer(&centered, 1.0);
            }
            self.keys[k].merge(m as u64, &mean_b, &scatter_b);
        }
        Ok(())
    }

    /// Population covariance M/n for a key; zero matrix when the key has
    /// fewer than two samples.
    pub fn covariance(&self, key: usize) -> Result<SymMatrix> {
        self.check_key(key)?;
        let stats = &self.keys[key];
        if stats.count <= 1 {
            return Ok(SymMatrix::zeros(self.feature_dim, self.mode));
        }
        Ok(stats.scatter.scaled(1.0 / stats.count as f64))
    }

    /// Merge two banks built over disjoint (or any) data streams.
    pub fn merge(&self, other: &CovarianceBank) -> Result<CovarianceBank> {
        if self.key_space != other.key_space
            || self.keys.len() != other.keys.len()
            || self.feature_dim != other.feature_dim
            || self.mode != other.mode
        {
            return Err(Error::BankMismatch(format!(
                "cannot merge banks: ({:?},{},{},{:?}) vs ({:?},{},{},{:?})",
                self.key_space,
                self.keys.len(),
                self.feature_dim,
                self.mode,
                other.key_space,
                other.keys.len(),
                other.feature_dim,
                other.mode
            )));
        }
        let mut out = self.clone();
        for (dst, src) in out.keys.iter_mut().zip(&other.keys) {
            dst.merge(src.count, &src.mean, &src.scatter);
        }
        Ok(out)
    }

    /// Count of scalars the bank stores: per key a count, a mean, and the
    /// scatter representation.
    pub fn memory_footprint(&self) -> usize {
        let f = self.feature_dim;
        let per_key = match self.mode {
            SymMode::Full => f * (f + 1) / 2 + f + 1,
            SymMode::Diagonal => 2 * f + 1,
        };
        self.keys.len() * per_key
    }

    /// Self-describing snapshot, exact round trip.
    pub fn to_snapshot(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_snapshot(text: &str) -> Result<CovarianceBank> {
        Ok(serde_json::from_str(text)?)
    }
}
