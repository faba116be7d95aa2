//! Randomized finite-difference sweep over every analytic gradient in the crate.

use std::fmt;

use ndarray::Array2;

use super::{finite_diff_gradient, grad_check, GradCheckReport};
use crate::baselines::{self, Centers, LgmParams, LinearClassifier};
use crate::error::Result;
use crate::head::{self, ClassGaussians, MarginConfig};
use crate::math::{sample_standard_normal, Rng};
use crate::network::{Head, Mlp};

/// Deliberate gradient corruption, used to confirm the suite can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    FlipIcuMeanGradient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub instances: usize,
    pub eps: f64,
    pub tol: f64,
    pub fault: Option<Fault>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 100,
            eps: 1e-4,
            tol: 1e-5,
            fault: None,
        }
    }
}

/// Worst result for one loss across all instances.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub instances: usize,
    pub worst_instance: usize,
    pub report: GradCheckReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.report.pass)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<8} {} instances  max_relative_error={:.3e}  worst=instance {} coordinate {}  {}",
                e.name,
                e.instances,
                e.report.max_relative_error,
                e.worst_instance,
                e.report.worst_coordinate,
                if e.report.pass { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || sample_standard_normal(rng))
}

fn uniform_matrix(rows: usize, cols: usize, low: f64, high: f64, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.uniform_range(low, high))
}

fn labels(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.below(k)).collect()
}

fn flatten(parts: &[&Array2<f64>]) -> Vec<f64> {
    parts.iter().flat_map(|a| a.iter().copied()).collect()
}

fn unflatten(p: &[f64], shapes: &[(usize, usize)]) -> Vec<Array2<f64>> {
    let mut off = 0;
    shapes
        .iter()
        .map(|&(r, c)| {
            let a = Array2::from_shape_vec((r, c), p[off..off + r * c].to_vec()).expect("shape");
            off += r * c;
            a
        })
        .collect()
}

fn shapes(parts: &[&Array2<f64>]) -> Vec<(usize, usize)> {
    parts.iter().map(|a| a.dim()).collect()
}

/// Random `(N, K, D)` with `N ≤ 8`, `2 ≤ K ≤ 4`, `D ≤ 3`.
fn dims(rng: &mut Rng) -> (usize, usize, usize) {
    (1 + rng.below(8), 2 + rng.below(3), 1 + rng.below(3))
}

fn icu_instance(rng: &mut Rng, cfg: &SuiteConfig) -> Result<GradCheckReport> {
    let (n, k, d) = dims(rng);
    let x = normal_matrix(n, d, rng);
    let y = labels(n, k, rng);
    let mu = normal_matrix(k, d, rng);
    let log_var = uniform_matrix(k, d, -0.5, 0.5, rng);
    let margins = MarginConfig {
        alpha: rng.uniform_range(0.0, 0.5),
        gamma: rng.uniform_range(0.0, 0.5),
        lambda1: rng.uniform_range(0.0, 0.5),
        lambda2: rng.uniform_range(0.0, 0.5),
    };
    let params = ClassGaussians::new(mu.clone(), log_var.clone())?;
    let mut g = head::icu_loss_backward(x.view(), &y, &params, &margins)?;
    if cfg.fault == Some(Fault::FlipIcuMeanGradient) {
        g.d_mu.mapv_inplace(|v| -v);
    }
    let layout = shapes(&[&x, &mu, &log_var]);
    let numeric = finite_diff_gradient(
        |p: &[f64]| {
            let a = unflatten(p, &layout);
            let params = ClassGaussians {
                mu: a[1].clone(),
                log_var: a[2].clone(),
            };
            head::icu_loss_forward(a[0].view(), &y, &params, &margins).map_or(f64::NAN, |o| o.total)
        },
        &flatten(&[&x, &mu, &log_var]),
        cfg.eps,
    )?;
    grad_check(&flatten(&[&g.d_x, &g.d_mu, &g.d_log_var]), &numeric, cfg.tol)
}

fn softmax_instance(rng: &mut Rng, cfg: &SuiteConfig) -> Result<GradCheckReport> {
    let (n, k, d) = dims(rng);
    let x = normal_matrix(n, d, rng);
    let y = labels(n, k, rng);
    let w = normal_matrix(k, d, rng);
    let out = baselines::softmax_ce(x.view(), &y, &LinearClassifier::new(w.clone())?)?;
    let layout = shapes(&[&x, &w]);
    let numeric = finite_diff_gradient(
        |p: &[f64]| {
            let a = unflatten(p, &layout);
            let clf = LinearClassifier { w: a[1].clone() };
            baselines::softmax_ce(a[0].view(), &y, &clf).map_or(f64::NAN, |o| o.loss)
        },
        &flatten(&[&x, &w]),
        cfg.eps,
    )?;
    grad_check(&flatten(&[&out.d_x, &out.d_w]), &numeric, cfg.tol)
}

fn center_instance(rng: &mut Rng, cfg: &SuiteConfig) -> Result<GradCheckReport> {
    let (n, k, d) = dims(rng);
    let x = normal_matrix(n, d, rng);
    let y = labels(n, k, rng);
    let w = normal_matrix(k, d, rng);
    let c = normal_matrix(k, d, rng);
    let lambda = rng.uniform_range(0.0, 0.5);
    let out = baselines::center_loss(
        x.view(),
        &y,
        &LinearClassifier::new(w.clone())?,
        &Centers::new(c.clone(), lambda)?,
    )?;
    let layout = shapes(&[&x, &w, &c]);
    let numeric = finite_diff_gradient(
        |p: &[f64]| {
            let a = unflatten(p, &layout);
            let clf = LinearClassifier { w: a[1].clone() };
            let centers = Centers {
                c: a[2].clone(),
                lambda_center: lambda,
            };
            baselines::center_loss(a[0].view(), &y, &clf, &centers).map_or(f64::NAN, |o| o.loss)
        },
        &flatten(&[&x, &w, &c]),
        cfg.eps,
    )?;
    grad_check(&flatten(&[&out.d_x, &out.d_w, &out.d_c]), &numeric, cfg.tol)
}

fn lgm_instance(rng: &mut Rng, cfg: &SuiteConfig) -> Result<GradCheckReport> {
    let (n, k, d) = dims(rng);
    let x = normal_matrix(n, d, rng);
    let y = labels(n, k, rng);
    let mu = normal_matrix(k, d, rng);
    let log_var = uniform_matrix(k, d, -0.5, 0.5, rng);
    let alpha = rng.uniform_range(0.0, 0.5);
    let lambda = rng.uniform_range(0.0, 0.5);
    let out = baselines::lgm_loss(
        x.view(),
        &y,
        &LgmParams::new(mu.clone(), log_var.clone(), alpha, lambda)?,
    )?;
    let layout = shapes(&[&x, &mu, &log_var]);
    let numeric = finite_diff_gradient(
        |p: &[f64]| {
            let a = unflatten(p, &layout);
            let params = LgmParams {
                mu: a[1].clone(),
                log_var: a[2].clone(),
                alpha,
                lambda_lik: lambda,
            };
            baselines::lgm_loss(a[0].view(), &y, &params).map_or(f64::NAN, |o| o.loss)
        },
        &flatten(&[&x, &mu, &log_var]),
        cfg.eps,
    )?;
    grad_check(&flatten(&[&out.d_x, &out.d_mu, &out.d_log_var]), &numeric, cfg.tol)
}

/// 4→3→2 backbone under an ICU head with N = 4, K = 2. Instances whose hidden
/// pre-activations come within 1e-3 of the ReLU kink are redrawn.
fn mlp_instance(rng: &mut Rng, cfg: &SuiteConfig) -> Result<GradCheckReport> {
    const N: usize = 4;
    let (mlp, x) = loop {
        let mlp = Mlp::<f64>::new(&[4, 3, 2], rng)?;
        let x = normal_matrix(N, 4, rng);
        let clear = mlp
            .hidden_preactivations(x.view())?
            .iter()
            .all(|z| z.iter().all(|v| v.abs() >= 1e-3));
        if clear {
            break (mlp, x);
        }
    };
    let y = labels(N, 2, rng);
    let params = ClassGaussians::new(normal_matrix(2, 2, rng), uniform_matrix(2, 2, -0.5, 0.5, rng))?;
    let head = Head::Icu(params);
    let margins = MarginConfig::default();

    let (emb, cache) = mlp.forward(x.view())?;
    let (_, d_emb, _) = head.loss(emb.view(), &y, &margins)?;
    let (grads, _) = mlp.backward(&cache, d_emb.view())?;
    let analytic: Vec<f64> = grads
        .layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
        .collect();

    let flat: Vec<f64> = mlp
        .layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
        .collect();
    let numeric = finite_diff_gradient(
        |p: &[f64]| {
            let mut net = mlp.clone();
            let mut values = p.iter();
            for layer in &mut net.layers {
                for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                    *v = *values.next().expect("parameter count");
                }
            }
            net.embed(x.view())
                .and_then(|e| head.loss(e.view(), &y, &margins))
                .map_or(f64::NAN, |(loss, _, _)| loss)
        },
        &flat,
        cfg.eps,
    )?;
    grad_check(&analytic, &numeric, cfg.tol)
}

type InstanceFn = fn(&mut Rng, &SuiteConfig) -> Result<GradCheckReport>;

/// Runs `cfg.instances` random instances per loss. Each loss draws from its
/// own worker stream of `cfg.seed`, so adding a loss does not perturb the others.
pub fn run_gradcheck_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let checks: [(&'static str, InstanceFn); 5] = [
        ("icu", icu_instance),
        ("softmax", softmax_instance),
        ("center", center_instance),
        ("lgm", lgm_instance),
        ("mlp", mlp_instance),
    ];
    let mut entries = Vec::with_capacity(checks.len());
    for (index, (name, check)) in checks.into_iter().enumerate() {
        let mut rng = Rng::for_worker(cfg.seed, index as u64);
        let mut worst: Option<(usize, GradCheckReport)> = None;
        for i in 0..cfg.instances {
            let report = check(&mut rng, cfg)?;
            let worse = !matches!(&worst, Some((_, w)) if report.max_relative_error <= w.max_relative_error);
            if worse {
                worst = Some((i, report));
            }
        }
        let (worst_instance, report) = worst.unwrap_or((
            0,
            GradCheckReport {
                max_relative_error: 0.0,
                worst_coordinate: 0,
                pass: true,
            },
        ));
        entries.push(SuiteEntry {
            name,
            instances: cfg.instances,
            worst_instance,
            report,
        });
    }
    Ok(SuiteReport { entries })
}
