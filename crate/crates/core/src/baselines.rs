//! Comparison losses: softmax cross-entropy over linear logits, center loss,
//! and the large-margin Gaussian mixture (L-GM) loss whose decision distance
//! has no log-determinant term.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{check_len, Error, Result};
use crate::head::{check_batch, clamp_log_var};
use crate::math::{argmax, argmin, log_sum_exp_unchecked, pairwise_sum, sample_standard_normal, Rng, Scalar};

/// Bias-free linear classifier; row `k` of `w` is the anchor of class `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier<T> {
    pub w: Array2<T>,
}

impl<T: Scalar> LinearClassifier<T> {
    pub fn new(w: Array2<T>) -> Result<Self> {
        if w.nrows() < 2 || w.ncols() == 0 {
            return Err(Error::invalid("w", "need K >= 2 rows and D >= 1 columns"));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear classifier"));
        }
        Ok(Self { w })
    }

    /// Rows drawn uniformly from `±sqrt(6 / (D + K))`.
    pub fn init(num_classes: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        let bound = (6.0 / (dim + num_classes) as f64).sqrt();
        Self::new(Array2::from_shape_simple_fn((num_classes, dim), || {
            T::lit(rng.uniform_range(-bound, bound))
        }))
    }

    pub fn num_classes(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn predict(&self, x: ArrayView1<T>) -> Result<usize> {
        check_len("sample dimension", self.dim(), x.len())?;
        Ok(argmax(self.w.dot(&x)))
    }

    pub fn predict_batch(&self, x: ArrayView2<T>) -> Result<Vec<usize>> {
        check_len("batch dimension", self.dim(), x.ncols())?;
        let logits = x.dot(&self.w.t());
        Ok(logits.outer_iter().map(|row| argmax(row.iter().copied())).collect())
    }
}

/// Class centroids for the center-loss penalty.
#[derive(Clone, Debug, PartialEq)]
pub struct Centers<T> {
    pub c: Array2<T>,
    pub lambda_center: T,
}

impl<T: Scalar> Centers<T> {
    pub fn new(c: Array2<T>, lambda_center: T) -> Result<Self> {
        if !lambda_center.is_finite() || lambda_center < T::zero() {
            return Err(Error::invalid("lambda_center", "must be finite and >= 0"));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("centers"));
        }
        Ok(Self { c, lambda_center })
    }

    pub fn zeros(num_classes: usize, dim: usize, lambda_center: T) -> Result<Self> {
        Self::new(Array2::zeros((num_classes, dim)), lambda_center)
    }
}

/// L-GM parameters: Gaussian means and diagonal log-variances, the
/// classification margin `alpha`, and the likelihood weight `lambda_lik`.
#[derive(Clone, Debug, PartialEq)]
pub struct LgmParams<T> {
    pub mu: Array2<T>,
    pub log_var: Array2<T>,
    pub alpha: T,
    pub lambda_lik: T,
}

impl<T: Scalar> LgmParams<T> {
    pub fn new(mu: Array2<T>, log_var: Array2<T>, alpha: T, lambda_lik: T) -> Result<Self> {
        if mu.nrows() < 2 || mu.ncols() == 0 {
            return Err(Error::invalid("mu", "need K >= 2 rows and D >= 1 columns"));
        }
        check_len("log_var rows", mu.nrows(), log_var.nrows())?;
        check_len("log_var columns", mu.ncols(), log_var.ncols())?;
        for (name, v) in [("alpha", alpha), ("lambda_lik", lambda_lik)] {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::invalid(name, "must be finite and >= 0"));
            }
        }
        if mu.iter().chain(log_var.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lgm parameters"));
        }
        Ok(Self {
            mu,
            log_var,
            alpha,
            lambda_lik,
        })
    }

    pub fn init(num_classes: usize, dim: usize, alpha: T, lambda_lik: T, rng: &mut Rng) -> Result<Self> {
        let mu = Array2::from_shape_simple_fn((num_classes, dim), || T::lit(sample_standard_normal(rng)));
        Self::new(mu, Array2::zeros((num_classes, dim)), alpha, lambda_lik)
    }

    pub fn num_classes(&self) -> usize {
        self.mu.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mu.ncols()
    }

    pub fn clamp_variances(&mut self) {
        clamp_log_var(&mut self.log_var);
    }

    /// `½ (x − μ_m)ᵀ Λ_m⁻¹ (x − μ_m)` for every class.
    fn mahalanobis_halves(&self, x: &ArrayView1<T>) -> Vec<T> {
        (0..self.num_classes())
            .map(|m| {
                let mut acc = T::zero();
                for d in 0..self.dim() {
                    let diff = x[d] - self.mu[[m, d]];
                    acc += diff * diff * (-self.log_var[[m, d]]).exp();
                }
                T::lit(0.5) * acc
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxOutput<T> {
    pub loss: T,
    pub d_x: Array2<T>,
    pub d_w: Array2<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CenterOutput<T> {
    pub loss: T,
    pub softmax_term: T,
    pub center_term: T,
    pub d_x: Array2<T>,
    pub d_w: Array2<T>,
    pub d_c: Array2<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LgmOutput<T> {
    pub loss: T,
    pub classification_term: T,
    pub likelihood_term: T,
    pub d_x: Array2<T>,
    pub d_mu: Array2<T>,
    pub d_log_var: Array2<T>,
}

/// Mean cross-entropy of `softmax(W x_i)`.
pub fn softmax_ce<T: Scalar>(
    x: ArrayView2<T>,
    labels: &[usize],
    clf: &LinearClassifier<T>,
) -> Result<SoftmaxOutput<T>> {
    check_batch(&x, labels, clf.dim(), clf.num_classes())?;
    let n = x.nrows();
    let inv_n = T::one() / T::from_count(n);
    let mut g = x.dot(&clf.w.t());
    let mut losses = Vec::with_capacity(n);
    for (mut row, &label) in g.axis_iter_mut(Axis(0)).zip(labels) {
        let lse = log_sum_exp_unchecked(row.iter().copied());
        losses.push(lse - row[label]);
        row.mapv_inplace(|z| (z - lse).exp() * inv_n);
        row[label] -= inv_n;
    }
    Ok(SoftmaxOutput {
        loss: pairwise_sum(&losses) * inv_n,
        d_x: g.dot(&clf.w),
        d_w: g.t().dot(&x),
    })
}

/// Softmax cross-entropy plus `(λ/2) Σ_i ‖x_i − c_{y_i}‖²`, summed over the batch.
pub fn center_loss<T: Scalar>(
    x: ArrayView2<T>,
    labels: &[usize],
    clf: &LinearClassifier<T>,
    centers: &Centers<T>,
) -> Result<CenterOutput<T>> {
    let ce = softmax_ce(x, labels, clf)?;
    check_len("center rows", clf.num_classes(), centers.c.nrows())?;
    check_len("center columns", clf.dim(), centers.c.ncols())?;
    let lambda = centers.lambda_center;
    let mut d_x = ce.d_x;
    let mut d_c = Array2::zeros(centers.c.dim());
    let mut sq = Vec::with_capacity(x.nrows());
    for (i, (row, &label)) in x.outer_iter().zip(labels).enumerate() {
        let mut acc = T::zero();
        for d in 0..x.ncols() {
            let diff = row[d] - centers.c[[label, d]];
            acc += diff * diff;
            d_x[[i, d]] += lambda * diff;
            d_c[[label, d]] -= lambda * diff;
        }
        sq.push(acc);
    }
    let center_term = T::lit(0.5) * lambda * pairwise_sum(&sq);
    Ok(CenterOutput {
        loss: ce.loss + center_term,
        softmax_term: ce.loss,
        center_term,
        d_x,
        d_w: ce.d_w,
        d_c,
    })
}

/// Margin cross-entropy over `−d_m (1 + α·[m = z_i])` plus the batch-averaged
/// likelihood term `λ (d_{z_i} + ½ ln|Λ_{z_i}|)`.
pub fn lgm_loss<T: Scalar>(x: ArrayView2<T>, labels: &[usize], p: &LgmParams<T>) -> Result<LgmOutput<T>> {
    let (num_classes, dim) = p.mu.dim();
    check_batch(&x, labels, dim, num_classes)?;
    let n = x.nrows();
    let inv_n = T::one() / T::from_count(n);
    let half = T::lit(0.5);
    let gt_scale = T::one() + p.alpha;

    let mut d_x = Array2::zeros((n, dim));
    let mut d_mu = Array2::zeros((num_classes, dim));
    let mut d_log_var = Array2::zeros((num_classes, dim));
    let mut ce_terms = Vec::with_capacity(n);
    let mut lik_terms = Vec::with_capacity(n);
    let mut logits = vec![T::zero(); num_classes];
    for (i, (row, &label)) in x.outer_iter().zip(labels).enumerate() {
        let dist = p.mahalanobis_halves(&row);
        for (m, logit) in logits.iter_mut().enumerate() {
            *logit = if m == label { -gt_scale * dist[m] } else { -dist[m] };
        }
        let lse = log_sum_exp_unchecked(logits.iter().copied());
        ce_terms.push(lse - logits[label]);
        let log_det: T = p.log_var.row(label).sum();
        lik_terms.push(dist[label] + half * log_det);

        for m in 0..num_classes {
            let prob = (logits[m] - lse).exp();
            let mut coef = if m == label {
                gt_scale * (T::one() - prob) + p.lambda_lik
            } else {
                -prob
            };
            coef *= inv_n;
            for d in 0..dim {
                let diff = row[d] - p.mu[[m, d]];
                let scaled = diff * (-p.log_var[[m, d]]).exp();
                d_x[[i, d]] += coef * scaled;
                d_mu[[m, d]] -= coef * scaled;
                d_log_var[[m, d]] -= coef * half * diff * scaled;
            }
        }
        for d in 0..dim {
            d_log_var[[label, d]] += p.lambda_lik * half * inv_n;
        }
    }
    let classification_term = pairwise_sum(&ce_terms) * inv_n;
    let likelihood_term = p.lambda_lik * pairwise_sum(&lik_terms) * inv_n;
    Ok(LgmOutput {
        loss: classification_term + likelihood_term,
        classification_term,
        likelihood_term,
        d_x,
        d_mu,
        d_log_var,
    })
}

/// Nearest class by Mahalanobis distance alone, ignoring `ln|Λ|`.
pub fn lgm_predict<T: Scalar>(x: ArrayView1<T>, p: &LgmParams<T>) -> Result<usize> {
    check_len("sample dimension", p.dim(), x.len())?;
    Ok(argmin(p.mahalanobis_halves(&x)))
}

pub fn lgm_predict_batch<T: Scalar>(x: ArrayView2<T>, p: &LgmParams<T>) -> Result<Vec<usize>> {
    check_len("batch dimension", p.dim(), x.ncols())?;
    Ok(x.outer_iter().map(|row| argmin(p.mahalanobis_halves(&row))).collect())
}
