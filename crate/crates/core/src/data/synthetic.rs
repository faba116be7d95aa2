use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{fnv1a, Dataset};
use crate::error::{Error, Result};
use crate::math::{sample_standard_normal, seeded_shuffle, Rng, Scalar};

/// One mixture component: diagonal Gaussian and the number of samples to draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmClass {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmSpec {
    pub classes: Vec<GmmClass>,
    pub seed: u64,
}

impl GmmSpec {
    pub fn validate(&self) -> Result<usize> {
        let first = self.classes.first().ok_or(Error::EmptyInput("mixture classes"))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::invalid("mean", "dimension must be at least 1"));
        }
        for (k, c) in self.classes.iter().enumerate() {
            if c.mean.len() != dim || c.var.len() != dim {
                return Err(Error::invalid(
                    "classes",
                    format!("class {k} does not have dimension {dim}"),
                ));
            }
            if c.count == 0 {
                return Err(Error::invalid("count", format!("class {k} has no samples")));
            }
            if c.var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::invalid("var", format!("class {k} variances must be positive")));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("mean", format!("class {k} mean must be finite")));
            }
        }
        Ok(dim)
    }

    pub fn fingerprint(&self) -> u64 {
        fnv1a(format!("{self:?}").as_bytes())
    }
}

/// Draws `mean_k + sqrt(var_k) ⊙ z` per sample, classes in spec order.
pub fn gen_gmm<T: Scalar>(spec: &GmmSpec) -> Result<Dataset<T>> {
    let dim = spec.validate()?;
    let total: usize = spec.classes.iter().map(|c| c.count).sum();
    let mut rng = Rng::new(spec.seed);
    let mut features = Array2::zeros((total, dim));
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for (k, class) in spec.classes.iter().enumerate() {
        let std: Vec<f64> = class.var.iter().map(|v| v.sqrt()).collect();
        for _ in 0..class.count {
            for d in 0..dim {
                features[[row, d]] = T::lit(class.mean[d] + std[d] * sample_standard_normal(&mut rng));
            }
            labels.push(k);
            row += 1;
        }
    }
    Dataset::new(
        features,
        labels,
        spec.classes.len(),
        format!("gmm:{:016x}", spec.fingerprint()),
    )
}

/// Exponential long-tail profile: the class at rank `r` keeps
/// `round(n₀ · ratio^(−r/(K−1)))` samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongTailSpec {
    pub ratio: f64,
    pub seed: u64,
    /// Assign profile ranks to a seeded permutation of the classes instead of label order.
    #[serde(default)]
    pub permute_classes: bool,
}

/// Target count per rank for `num_classes` classes and head count `n0`.
pub fn longtail_counts(n0: usize, num_classes: usize, ratio: f64) -> Result<Vec<usize>> {
    if !(ratio.is_finite() && ratio > 1.0) {
        return Err(Error::invalid("ratio", format!("must be > 1, got {ratio}")));
    }
    if num_classes < 2 {
        return Err(Error::invalid(
            "num_classes",
            "long-tail profile needs at least two classes",
        ));
    }
    let last = (num_classes - 1) as f64;
    Ok((0..num_classes)
        .map(|r| (n0 as f64 * ratio.powf(-(r as f64) / last)).round() as usize)
        .collect())
}

pub fn longtail_subsample<T: Scalar>(dataset: &Dataset<T>, spec: &LongTailSpec) -> Result<Dataset<T>> {
    let k = dataset.num_classes;
    let mut rng = Rng::new(spec.seed);
    let rank_to_class: Vec<usize> = if spec.permute_classes {
        seeded_shuffle((0..k).collect(), &mut rng)
    } else {
        (0..k).collect()
    };
    let available = dataset.class_counts();
    let targets = longtail_counts(available[rank_to_class[0]], k, spec.ratio)?;
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in dataset.labels.iter().enumerate() {
        per_class[l].push(i);
    }
    let mut keep = vec![0usize; k];
    for (rank, &class) in rank_to_class.iter().enumerate() {
        keep[class] = targets[rank];
    }
    let mut selected = Vec::with_capacity(keep.iter().sum());
    for (class, indices) in per_class.into_iter().enumerate() {
        if indices.len() < keep[class] {
            return Err(Error::InsufficientSamples {
                class,
                needed: keep[class],
                available: indices.len(),
            });
        }
        let shuffled = seeded_shuffle(indices, &mut rng);
        selected.extend_from_slice(&shuffled[..keep[class]]);
    }
    selected.sort_unstable();
    dataset.subset(
        &selected,
        format!("{}|longtail:{}:{}", dataset.source, spec.ratio, spec.seed),
    )
}
