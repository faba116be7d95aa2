//! Independent ground truth: the Bayes classifier of a known diagonal
//! Gaussian mixture, and central finite differences for checking analytic
//! gradients.

mod suite;

pub use suite::{run_gradcheck_suite, Fault, SuiteConfig, SuiteEntry, SuiteReport};

use ndarray::{Array2, ArrayView1};

use crate::error::{check_len, Error, Result};
use crate::math::{sample_standard_normal, Rng, Scalar};

/// Known generative mixture: per-class mean, diagonal variance and prior.
#[derive(Clone, Debug, PartialEq)]
pub struct TrueGmm<T> {
    pub means: Array2<T>,
    pub vars: Array2<T>,
    pub priors: Vec<T>,
}

impl<T: Scalar> TrueGmm<T> {
    /// Priors must lie in `[0, 1]` and sum to 1 within 1e-12. A zero prior
    /// removes the class from the decision rule.
    pub fn new(means: Array2<T>, vars: Array2<T>, priors: Vec<T>) -> Result<Self> {
        check_len("variance rows", means.nrows(), vars.nrows())?;
        check_len("variance columns", means.ncols(), vars.ncols())?;
        check_len("priors", means.nrows(), priors.len())?;
        if means.nrows() == 0 || means.ncols() == 0 {
            return Err(Error::EmptyInput("mixture"));
        }
        if vars.iter().any(|v| !(v.is_finite() && *v > T::zero())) {
            return Err(Error::invalid("vars", "variances must be positive"));
        }
        if priors.iter().any(|p| !(*p >= T::zero() && *p <= T::one())) {
            return Err(Error::invalid("priors", "each prior must lie in [0, 1]"));
        }
        let total: f64 = priors.iter().map(|p| p.as_f64()).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("priors", format!("must sum to 1, got {total}")));
        }
        Ok(Self { means, vars, priors })
    }

    pub fn equal_priors(means: Array2<T>, vars: Array2<T>) -> Result<Self> {
        let k = means.nrows();
        Self::new(means, vars, vec![T::one() / T::from_count(k); k])
    }

    pub fn num_classes(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Log joint density up to the shared `−(D/2) ln 2π` constant.
    pub fn log_joint(&self, x: ArrayView1<T>, class: usize) -> T {
        let mut maha = T::zero();
        let mut log_det = T::zero();
        for d in 0..self.dim() {
            let var = self.vars[[class, d]];
            let diff = x[d] - self.means[[class, d]];
            maha += diff * diff / var;
            log_det += var.ln();
        }
        self.priors[class].ln() - T::lit(0.5) * (maha + log_det)
    }

    /// Draws a class from the priors, then a point from that class.
    pub fn sample(&self, rng: &mut Rng) -> (Vec<T>, usize) {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut class = self.num_classes() - 1;
        for (k, p) in self.priors.iter().enumerate() {
            acc += p.as_f64();
            if u < acc {
                class = k;
                break;
            }
        }
        while self.priors[class] == T::zero() {
            class -= 1;
        }
        let x = (0..self.dim())
            .map(|d| {
                let z = sample_standard_normal(rng);
                self.means[[class, d]] + self.vars[[class, d]].sqrt() * T::lit(z)
            })
            .collect();
        (x, class)
    }
}

/// Seed and sample count behind [`NARROW_WIDE_BAYES_ACCURACY`].
pub const NARROW_WIDE_REFERENCE_SEED: u64 = 20_190_101;
pub const NARROW_WIDE_REFERENCE_SAMPLES: usize = 1_000_000;

/// Monte-Carlo Bayes accuracy of [`narrow_wide_mixture`], frozen from
/// `bayes_accuracy` at the seed and sample count above. The closed-form value
/// is 0.957226 (quadratic boundary roots −1.63675 and 1.10342).
pub const NARROW_WIDE_BAYES_ACCURACY: f64 = 0.957_097;

/// One-dimensional, equal-prior pair: a narrow class `N(0, 0.25)` next to a
/// wide class `N(4, 4)`. Points slightly closer to the narrow mean still
/// belong to the wide class once `ln σ²` enters the distance.
pub fn narrow_wide_mixture() -> TrueGmm<f64> {
    TrueGmm::equal_priors(
        Array2::from_shape_vec((2, 1), vec![0.0, 4.0]).expect("shape"),
        Array2::from_shape_vec((2, 1), vec![0.25, 4.0]).expect("shape"),
    )
    .expect("valid mixture")
}

/// Maximum a-posteriori class under the true mixture; ties go to the lowest index.
pub fn bayes_predict<T: Scalar>(x: ArrayView1<T>, gmm: &TrueGmm<T>) -> Result<usize> {
    check_len("sample dimension", gmm.dim(), x.len())?;
    let mut best = 0;
    let mut best_score = T::neg_infinity();
    for k in 0..gmm.num_classes() {
        let s = gmm.log_joint(x, k);
        if s > best_score {
            best = k;
            best_score = s;
        }
    }
    Ok(best)
}

/// Monte-Carlo accuracy of [`bayes_predict`] on `n_samples` fresh draws.
pub fn bayes_accuracy<T: Scalar>(gmm: &TrueGmm<T>, n_samples: usize, rng: &mut Rng) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::EmptyInput("bayes_accuracy samples"));
    }
    let mut correct = 0usize;
    for _ in 0..n_samples {
        let (x, class) = gmm.sample(rng);
        if bayes_predict(ArrayView1::from(&x), gmm)? == class {
            correct += 1;
        }
    }
    Ok(correct as f64 / n_samples as f64)
}

/// Central differences `(f(p + ε e_i) − f(p − ε e_i)) / 2ε`.
pub fn finite_diff_gradient<T, F>(mut f: F, params: &[T], eps: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    if eps.is_nan() || eps <= T::zero() {
        return Err(Error::invalid("eps", "must be positive"));
    }
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let plus = f(&p);
        p[i] = orig - eps;
        let minus = f(&p);
        p[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("finite-difference objective"));
        }
        grad.push((plus - minus) / (eps + eps));
    }
    Ok(grad)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_coordinate: usize,
    pub pass: bool,
}

/// Worst per-coordinate `|a − n| / max(1, |a|, |n|)`.
pub fn grad_check<T: Scalar>(analytic: &[T], numeric: &[T], tol: f64) -> Result<GradCheckReport> {
    check_len("gradient lengths", analytic.len(), numeric.len())?;
    let mut worst = 0;
    let mut max_err = 0.0f64;
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let (a, n) = (a.as_f64(), n.as_f64());
        let err = (a - n).abs() / 1f64.max(a.abs()).max(n.abs());
        if err > max_err || err.is_nan() {
            max_err = err;
            worst = i;
        }
    }
    Ok(GradCheckReport {
        max_relative_error: max_err,
        worst_coordinate: worst,
        pass: max_err <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{self, ClassGaussians};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn finite_differences_of_polynomials() {
        let g = finite_diff_gradient(|p: &[f64]| p.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-4).unwrap();
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(g[1], 4.0, epsilon = 1e-8);
        let g = finite_diff_gradient(|_: &[f64]| 3.0, &[1.0, -2.0, 0.5], 1e-4).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        // cubic: truncation error is ε²·f'''/6 = ε²
        let g = finite_diff_gradient(|p: &[f64]| p[0].powi(3), &[1.5], 1e-3).unwrap();
        assert_abs_diff_eq!(g[0], 3.0 * 2.25, epsilon = 1.1e-6);
    }

    #[test]
    fn finite_differences_reject_non_finite() {
        let err = finite_diff_gradient(|p: &[f64]| 1.0 / p[0], &[0.0], 1e-4);
        assert!(err.is_ok());
        let err = finite_diff_gradient(|p: &[f64]| (p[0] - 1e-4).ln(), &[0.0], 1e-4);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert!(finite_diff_gradient(|_: &[f64]| 0.0, &[0.0], 0.0).is_err());
    }

    #[test]
    fn grad_check_examples() {
        let r = grad_check(&[1.0, 2.0], &[1.0, 2.0], 1e-5).unwrap();
        assert!(r.pass && r.max_relative_error == 0.0);
        let r = grad_check(&[1.0, 1.0], &[1.0, 1.1], 1e-5).unwrap();
        assert!(!r.pass);
        assert_eq!(r.worst_coordinate, 1);
        assert_abs_diff_eq!(r.max_relative_error, 0.1 / 1.1, epsilon = 1e-12);
        let r = grad_check(&[0.0, 0.0], &[0.0, 0.0], 1e-5).unwrap();
        assert!(r.pass);
        assert!(grad_check(&[0.0], &[0.0, 1.0], 1e-5).is_err());
    }

    fn confusion_gmm(priors: Vec<f64>) -> TrueGmm<f64> {
        TrueGmm::new(array![[0.0], [4.0]], array![[0.25], [4.0]], priors).unwrap()
    }

    #[test]
    fn bayes_predict_examples() {
        let g = TrueGmm::equal_priors(array![[0.0, 0.0], [3.0, 1.0]], array![[2.0, 2.0], [2.0, 2.0]]).unwrap();
        assert_eq!(bayes_predict(array![1.0, 0.2].view(), &g).unwrap(), 0);
        assert_eq!(bayes_predict(array![2.0, 0.8].view(), &g).unwrap(), 1);

        assert_eq!(
            bayes_predict(array![1.4].view(), &confusion_gmm(vec![0.5, 0.5])).unwrap(),
            1
        );

        let g = confusion_gmm(vec![1.0, 0.0]);
        for x in [-1e150, -3.0, 1.4, 4.0, 50.0, 1e150] {
            assert_eq!(bayes_predict(array![x].view(), &g).unwrap(), 0, "x = {x}");
        }
    }

    #[test]
    fn bayes_accuracy_examples() {
        let far = TrueGmm::equal_priors(array![[0.0], [100.0]], array![[1.0], [1.0]]).unwrap();
        assert_eq!(bayes_accuracy(&far, 10_000, &mut Rng::new(1)).unwrap(), 1.0);
        let same = TrueGmm::equal_priors(array![[0.0], [0.0]], array![[1.0], [1.0]]).unwrap();
        let acc = bayes_accuracy(&same, 10_000, &mut Rng::new(2)).unwrap();
        assert!((acc - 0.5).abs() <= 0.02, "{acc}");
        assert!(bayes_accuracy(&same, 0, &mut Rng::new(2)).is_err());
    }

    #[test]
    fn degenerate_prior_never_samples_empty_class() {
        let g = confusion_gmm(vec![1.0, 0.0]);
        let mut rng = Rng::new(4);
        assert!((0..1000).all(|_| g.sample(&mut rng).1 == 0));
    }

    #[test]
    fn validation() {
        assert!(TrueGmm::new(array![[0.0]], array![[1.0]], vec![0.9]).is_err());
        assert!(TrueGmm::new(array![[0.0]], array![[0.0]], vec![1.0]).is_err());
        assert!(TrueGmm::new(array![[0.0], [1.0]], array![[1.0], [1.0]], vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn equal_prior_bayes_matches_icu_predict() {
        let mut rng = Rng::new(99);
        let means = Array2::from_shape_simple_fn((4, 3), || 2.0 * sample_standard_normal(&mut rng));
        let vars = Array2::from_shape_simple_fn((4, 3), || rng.uniform_range(0.2, 3.0));
        let gmm = TrueGmm::equal_priors(means.clone(), vars.clone()).unwrap();
        let icu = ClassGaussians::from_variances(means, vars).unwrap();
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..3).map(|_| 4.0 * sample_standard_normal(&mut rng)).collect();
            let x = ArrayView1::from(&x);
            assert_eq!(bayes_predict(x, &gmm).unwrap(), head::predict(x, &icu).unwrap());
        }
    }
}
