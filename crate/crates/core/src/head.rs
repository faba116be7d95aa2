//! Gaussian class-conditional head with intra-class uncertainty.
//!
//! Every class `k` owns a mean `μ_k` and a diagonal covariance stored as
//! per-dimension log-variances. The decision distance
//!
//! ```text
//! d_k(x) = ½ [ Σ_d (x_d − μ_{k,d})² / σ²_{k,d} + Σ_d ln σ²_{k,d} ]
//! ```
//!
//! keeps the log-determinant, so at equal Mahalanobis distance a sample is
//! assigned to the tighter class. Training adds two margins on the
//! ground-truth class: the intra-class margin `γ` scales `|Σ|` inside the
//! logarithm (adding `½ ln(1+γ)` to the distance), and the inter-class margin
//! `α` multiplies the ground-truth distance by `1 + α`. A moment-matching
//! regularizer pulls `(μ_k, σ²_k)` toward the minibatch moments of class `k`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{check_len, Error, Result};
use crate::math::{argmin, log_sum_exp_unchecked, pairwise_sum, sample_standard_normal, Rng, Scalar};

/// Smallest variance any Gaussian parameter may take after an optimizer step.
pub const MIN_VARIANCE: f64 = 1e-6;

/// Per-class means and diagonal log-variances, both `K × D`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassGaussians<T> {
    pub mu: Array2<T>,
    pub log_var: Array2<T>,
}

impl<T: Scalar> ClassGaussians<T> {
    pub fn new(mu: Array2<T>, log_var: Array2<T>) -> Result<Self> {
        let params = Self { mu, log_var };
        params.validate()?;
        Ok(params)
    }

    /// Means drawn from `N(0, 1)` per dimension, unit variances.
    pub fn init(num_classes: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        let mu = Array2::from_shape_simple_fn((num_classes, dim), || T::lit(sample_standard_normal(rng)));
        Self::new(mu, Array2::zeros((num_classes, dim)))
    }

    pub fn from_variances(mu: Array2<T>, var: Array2<T>) -> Result<Self> {
        if var.iter().any(|v| *v <= T::zero()) {
            return Err(Error::invalid("var", "variances must be positive"));
        }
        Self::new(mu, var.mapv(T::ln))
    }

    pub fn validate(&self) -> Result<()> {
        let (k, d) = self.mu.dim();
        if k < 2 {
            return Err(Error::invalid("mu", "at least two classes are required"));
        }
        if d == 0 {
            return Err(Error::invalid("mu", "dimension must be at least 1"));
        }
        check_len("log_var rows", k, self.log_var.nrows())?;
        check_len("log_var columns", d, self.log_var.ncols())?;
        if self.mu.iter().chain(self.log_var.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("class gaussians"));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.mu.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mu.ncols()
    }

    pub fn variances(&self) -> Array2<T> {
        self.log_var.mapv(T::exp)
    }

    /// Applies the variance floor `σ² ≥ MIN_VARIANCE`.
    pub fn clamp_variances(&mut self) {
        clamp_log_var(&mut self.log_var);
    }
}

pub(crate) fn clamp_log_var<T: Scalar>(log_var: &mut Array2<T>) {
    let floor = T::lit(MIN_VARIANCE.ln());
    log_var.mapv_inplace(|v| v.max(floor));
}

/// Margins and regularizer weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginConfig<T> {
    /// Inter-class margin: the ground-truth distance is scaled by `1 + alpha`.
    pub alpha: T,
    /// Intra-class margin: adds `½ ln(1 + gamma)` to the ground-truth distance.
    pub gamma: T,
    /// Weight on `‖μ_k − μ̄_k‖²`.
    pub lambda1: T,
    /// Weight on `Σ_d (σ²_{k,d} − σ̄²_{k,d})²`.
    pub lambda2: T,
}

impl<T: Scalar> Default for MarginConfig<T> {
    fn default() -> Self {
        Self {
            alpha: T::lit(1e-4),
            gamma: T::lit(1e-3),
            lambda1: T::lit(0.1),
            lambda2: T::lit(0.1),
        }
    }
}

impl<T: Scalar> MarginConfig<T> {
    pub fn zero() -> Self {
        Self {
            alpha: T::zero(),
            gamma: T::zero(),
            lambda1: T::zero(),
            lambda2: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-class minibatch moments. Rows of classes with `count == 0` are zero
/// and must not be read.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMoments<T> {
    pub mean: Array2<T>,
    pub var: Array2<T>,
    pub count: Vec<usize>,
}

impl<T> BatchMoments<T> {
    pub fn is_present(&self, class: usize) -> bool {
        self.count[class] > 0
    }
}

/// Gradients of the composite loss.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle<T> {
    pub d_x: Array2<T>,
    pub d_mu: Array2<T>,
    pub d_log_var: Array2<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput<T> {
    pub total: T,
    pub classification_term: T,
    pub regularizer_term: T,
    /// Log of the margin-adjusted posterior of each sample's own class.
    pub per_sample_log_posterior: Array1<T>,
}

fn check_sample<T: Scalar>(x: &ArrayView1<T>, params: &ClassGaussians<T>) -> Result<()> {
    check_len("sample dimension", params.dim(), x.len())
}

pub(crate) fn check_batch<T: Scalar>(
    x: &ArrayView2<T>,
    labels: &[usize],
    dim: usize,
    num_classes: usize,
) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::EmptyInput("batch"));
    }
    check_len("batch dimension", dim, x.ncols())?;
    check_len("labels", x.nrows(), labels.len())?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::ClassOutOfRange {
            index: bad,
            num_classes,
        });
    }
    Ok(())
}

/// Margin-free distance of `x` to class `k` given precomputed inverse
/// variances and log-determinants.
#[inline]
fn raw_distance<T: Scalar>(x: &ArrayView1<T>, mu: ArrayView1<T>, inv_var: ArrayView1<T>, log_det: T) -> T {
    let mut maha = T::zero();
    for ((&xd, &md), &iv) in x.iter().zip(mu.iter()).zip(inv_var.iter()) {
        let diff = xd - md;
        maha += diff * diff * iv;
    }
    T::lit(0.5) * (maha + log_det)
}

/// `ln|Σ_k| = Σ_d ln σ²_{k,d}` per class.
fn log_dets<T: Scalar>(params: &ClassGaussians<T>) -> Array1<T> {
    params.log_var.sum_axis(Axis(1))
}

fn inverse_variances<T: Scalar>(params: &ClassGaussians<T>) -> Array2<T> {
    params.log_var.mapv(|v| (-v).exp())
}

pub fn decision_distance<T: Scalar>(x: ArrayView1<T>, class: usize, params: &ClassGaussians<T>, gamma: T) -> Result<T> {
    check_sample(&x, params)?;
    if class >= params.num_classes() {
        return Err(Error::ClassOutOfRange {
            index: class,
            num_classes: params.num_classes(),
        });
    }
    if gamma.is_nan() || gamma < T::zero() {
        return Err(Error::invalid("gamma", "must be >= 0"));
    }
    let log_var = params.log_var.row(class);
    let inv_var = log_var.mapv(|v| (-v).exp());
    let log_det = log_var.sum();
    let d = raw_distance(&x, params.mu.row(class), inv_var.view(), log_det);
    Ok(d + T::lit(0.5) * gamma.ln_1p())
}

/// Margin-free decision distances to every class.
pub fn distances<T: Scalar>(x: ArrayView1<T>, params: &ClassGaussians<T>) -> Result<Array1<T>> {
    check_sample(&x, params)?;
    let inv_var = inverse_variances(params);
    let log_det = log_dets(params);
    Ok(Array1::from_shape_fn(params.num_classes(), |k| {
        raw_distance(&x, params.mu.row(k), inv_var.row(k), log_det[k])
    }))
}

/// Softmax of the negated distances under a uniform class prior.
pub fn posterior<T: Scalar>(x: ArrayView1<T>, params: &ClassGaussians<T>) -> Result<Array1<T>> {
    let d = distances(x, params)?;
    let lse = log_sum_exp_unchecked(d.iter().map(|v| -*v));
    Ok(d.mapv(|v| (-v - lse).exp()))
}

/// Inference rule: nearest class by decision distance with margins off.
pub fn predict<T: Scalar>(x: ArrayView1<T>, params: &ClassGaussians<T>) -> Result<usize> {
    Ok(argmin(distances(x, params)?))
}

pub fn predict_batch<T: Scalar>(x: ArrayView2<T>, params: &ClassGaussians<T>) -> Result<Vec<usize>> {
    check_len("batch dimension", params.dim(), x.ncols())?;
    let inv_var = inverse_variances(params);
    let log_det = log_dets(params);
    Ok(x.outer_iter()
        .map(|row| {
            argmin((0..params.num_classes()).map(|k| raw_distance(&row, params.mu.row(k), inv_var.row(k), log_det[k])))
        })
        .collect())
}

/// Per-class batch means, and per-dimension mean squared deviation from the
/// learned mean `μ_k` (not from the batch mean).
pub fn batch_moments<T: Scalar>(
    x: ArrayView2<T>,
    labels: &[usize],
    params: &ClassGaussians<T>,
) -> Result<BatchMoments<T>> {
    let (k, d) = params.mu.dim();
    check_batch(&x, labels, d, k)?;
    let mut mean = Array2::zeros((k, d));
    let mut var = Array2::zeros((k, d));
    let mut count = vec![0usize; k];
    for (row, &label) in x.outer_iter().zip(labels) {
        count[label] += 1;
        let mu = params.mu.row(label);
        Zip::from(mean.row_mut(label))
            .and(var.row_mut(label))
            .and(&row)
            .and(&mu)
            .for_each(|m, v, &xd, &md| {
                *m += xd;
                *v += (xd - md) * (xd - md);
            });
    }
    for (class, &n) in count.iter().enumerate() {
        if n > 0 {
            let inv = T::one() / T::from_count(n);
            mean.row_mut(class).mapv_inplace(|v| v * inv);
            var.row_mut(class).mapv_inplace(|v| v * inv);
        }
    }
    Ok(BatchMoments { mean, var, count })
}

/// `Σ_k λ₁‖μ_k − μ̄_k‖² + λ₂ Σ_d (σ²_{k,d} − σ̄²_{k,d})²` over classes present in the batch.
pub fn regularizer<T: Scalar>(params: &ClassGaussians<T>, moments: &BatchMoments<T>, cfg: &MarginConfig<T>) -> T {
    let mut total = T::zero();
    for class in 0..params.num_classes() {
        if !moments.is_present(class) {
            continue;
        }
        let mut mean_term = T::zero();
        let mut var_term = T::zero();
        for d in 0..params.dim() {
            let dm = params.mu[[class, d]] - moments.mean[[class, d]];
            let dv = params.log_var[[class, d]].exp() - moments.var[[class, d]];
            mean_term += dm * dm;
            var_term += dv * dv;
        }
        total += cfg.lambda1 * mean_term + cfg.lambda2 * var_term;
    }
    total
}

pub fn icu_loss_forward<T: Scalar>(
    x: ArrayView2<T>,
    labels: &[usize],
    params: &ClassGaussians<T>,
    cfg: &MarginConfig<T>,
) -> Result<LossOutput<T>> {
    Ok(evaluate(x, labels, params, cfg, false)?.0)
}

pub fn icu_loss_backward<T: Scalar>(
    x: ArrayView2<T>,
    labels: &[usize],
    params: &ClassGaussians<T>,
    cfg: &MarginConfig<T>,
) -> Result<GradientBundle<T>> {
    Ok(evaluate(x, labels, params, cfg, true)?.1.expect("gradients requested"))
}

/// Forward value and gradients in one pass.
pub fn icu_loss<T: Scalar>(
    x: ArrayView2<T>,
    labels: &[usize],
    params: &ClassGaussians<T>,
    cfg: &MarginConfig<T>,
) -> Result<(LossOutput<T>, GradientBundle<T>)> {
    let (out, grads) = evaluate(x, labels, params, cfg, true)?;
    Ok((out, grads.expect("gradients requested")))
}

fn evaluate<T: Scalar>(
    x: ArrayView2<T>,
    labels: &[usize],
    params: &ClassGaussians<T>,
    cfg: &MarginConfig<T>,
    want_grad: bool,
) -> Result<(LossOutput<T>, Option<GradientBundle<T>>)> {
    let (num_classes, dim) = params.mu.dim();
    check_batch(&x, labels, dim, num_classes)?;
    cfg.validate()?;
    let n = x.nrows();
    let half = T::lit(0.5);
    let inv_n = T::one() / T::from_count(n);
    let gt_scale = T::one() + cfg.alpha;
    let gt_offset = half * cfg.gamma.ln_1p();

    let inv_var = inverse_variances(params);
    let log_det = log_dets(params);

    let mut grads = want_grad.then(|| GradientBundle {
        d_x: Array2::zeros((n, dim)),
        d_mu: Array2::zeros((num_classes, dim)),
        d_log_var: Array2::zeros((num_classes, dim)),
    });

    let mut logits = vec![T::zero(); num_classes];
    let mut log_post = Array1::zeros(n);
    for (i, (row, &label)) in x.outer_iter().zip(labels).enumerate() {
        for (k, logit) in logits.iter_mut().enumerate() {
            let d = raw_distance(&row, params.mu.row(k), inv_var.row(k), log_det[k]);
            *logit = if k == label { -gt_scale * (d + gt_offset) } else { -d };
        }
        let lse = log_sum_exp_unchecked(logits.iter().copied());
        log_post[i] = logits[label] - lse;

        let Some(g) = grads.as_mut() else { continue };
        for (k, &logit) in logits.iter().enumerate() {
            // ∂CE_i/∂d_k = scale_k (1[k = z_i] − p_k)
            let p = (logit - lse).exp();
            let coef = if k == label { gt_scale * (T::one() - p) } else { -p } * inv_n;
            for d in 0..dim {
                let diff = row[d] - params.mu[[k, d]];
                let scaled = diff * inv_var[[k, d]];
                g.d_x[[i, d]] += coef * scaled;
                g.d_mu[[k, d]] -= coef * scaled;
                g.d_log_var[[k, d]] += coef * half * (T::one() - diff * scaled);
            }
        }
    }

    let per_sample: Vec<T> = log_post.iter().map(|v| -*v).collect();
    let classification_term = pairwise_sum(&per_sample) * inv_n;

    let moments = batch_moments(x, labels, params)?;
    let regularizer_term = regularizer(params, &moments, cfg);
    if let Some(g) = grads.as_mut() {
        add_regularizer_gradients(g, x, labels, params, &moments, cfg);
    }

    Ok((
        LossOutput {
            total: classification_term + regularizer_term,
            classification_term,
            regularizer_term,
            per_sample_log_posterior: log_post,
        },
        grads,
    ))
}

/// Gradients of the moment regularizer. The batch variance is measured around
/// the learned mean, so `∂σ̄²/∂μ = −2(μ̄ − μ)` couples the two terms:
/// `∂R/∂μ = 2λ₁(μ − μ̄) − 4λ₂(σ² − σ̄²)(μ − μ̄)`.
fn add_regularizer_gradients<T: Scalar>(
    g: &mut GradientBundle<T>,
    x: ArrayView2<T>,
    labels: &[usize],
    params: &ClassGaussians<T>,
    moments: &BatchMoments<T>,
    cfg: &MarginConfig<T>,
) {
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let dim = params.dim();
    let mut dm = Array2::<T>::zeros(params.mu.dim());
    let mut dv = Array2::<T>::zeros(params.mu.dim());
    for class in 0..params.num_classes() {
        if !moments.is_present(class) {
            continue;
        }
        for d in 0..dim {
            let var = params.log_var[[class, d]].exp();
            let m = params.mu[[class, d]] - moments.mean[[class, d]];
            let v = var - moments.var[[class, d]];
            dm[[class, d]] = m;
            dv[[class, d]] = v;
            g.d_mu[[class, d]] += two * cfg.lambda1 * m - four * cfg.lambda2 * v * m;
            g.d_log_var[[class, d]] += two * cfg.lambda2 * v * var;
        }
    }
    for (i, (row, &label)) in x.outer_iter().zip(labels).enumerate() {
        let inv_count = T::one() / T::from_count(moments.count[label]);
        for d in 0..dim {
            let centered = row[d] - params.mu[[label, d]];
            g.d_x[[i, d]] -=
                inv_count * (two * cfg.lambda1 * dm[[label, d]] + four * cfg.lambda2 * dv[[label, d]] * centered);
        }
    }
}

/// One-dimensional intra-class margin condition at equal Mahalanobis
/// distance and `α = 0`: the ground-truth class wins iff
/// `σ²_other − σ²_gt > γ σ²_gt`.
pub fn margin_boundary_check<T: Scalar>(sigma2_gt: T, sigma2_other: T, gamma: T) -> bool {
    sigma2_other - sigma2_gt > gamma * sigma2_gt
}
