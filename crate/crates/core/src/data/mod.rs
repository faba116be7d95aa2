//! Datasets: MNIST IDX ingestion, synthetic Gaussian mixtures, long-tailed
//! subsampling, CSV export/import and minibatch iteration.

mod csv;
mod idx;
mod synthetic;

pub use self::csv::{read_csv, write_csv};
pub use idx::{load_mnist_idx, parse_idx_images, parse_idx_labels, IMAGES_MAGIC, LABELS_MAGIC, MNIST_CLASSES};
pub use synthetic::{gen_gmm, longtail_counts, longtail_subsample, GmmClass, GmmSpec, LongTailSpec};

use ndarray::{Array2, Axis};

use crate::error::{check_len, Error, Result};
use crate::math::{seeded_shuffle, Rng, Scalar};

/// Feature matrix (`N × D_in`) with integer labels in `0..num_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub features: Array2<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// File path or synthetic-spec fingerprint the data came from.
    pub source: String,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(features: Array2<T>, labels: Vec<usize>, num_classes: usize, source: impl Into<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("dataset"));
        }
        check_len("dataset labels", features.nrows(), labels.len())?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::ClassOutOfRange {
                index: bad,
                num_classes,
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize], source: impl Into<String>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(
                "indices",
                format!("row {bad} out of range for {} rows", self.len()),
            ));
        }
        Self::new(
            self.features.select(Axis(0), indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
            source,
        )
    }
}

/// One minibatch, copied out of the dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub features: Array2<T>,
    pub labels: Vec<usize>,
}

/// Minibatches over a seeded permutation; the final batch may be short.
pub struct BatchIter<'a, T> {
    dataset: &'a Dataset<T>,
    order: Vec<usize>,
    batch_size: usize,
    position: usize,
}

pub fn batch_iter<'a, T: Scalar>(
    dataset: &'a Dataset<T>,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<BatchIter<'a, T>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    Ok(BatchIter {
        dataset,
        order: seeded_shuffle((0..dataset.len()).collect(), rng),
        batch_size,
        position: 0,
    })
}

impl<T: Scalar> Iterator for BatchIter<'_, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        if self.position >= self.order.len() {
            return None;
        }
        let end = (self.position + self.batch_size).min(self.order.len());
        let idx = &self.order[self.position..end];
        self.position = end;
        Some(Batch {
            features: self.dataset.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.dataset.labels[i]).collect(),
        })
    }
}

/// 64-bit FNV-1a, used to fingerprint synthetic specs.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}
