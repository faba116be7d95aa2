use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, ArrayViewMutD, Axis};
use serde::{Deserialize, Serialize};

use super::optim::{OptimizerState, Param};
use super::{Mlp, MlpGradients};
use crate::baselines::{self, Centers, LgmParams, LinearClassifier};
use crate::data::{batch_iter, Dataset};
use crate::error::{check_len, Error, Result};
use crate::head::{self, ClassGaussians, MarginConfig};
use crate::math::{pairwise_sum, Rng, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Icu,
    Softmax,
    Center,
    Lgm,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Icu, LossKind::Softmax, LossKind::Center, LossKind::Lgm];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Icu => "icu",
            LossKind::Softmax => "softmax",
            LossKind::Center => "center",
            LossKind::Lgm => "lgm",
        }
    }

    pub(crate) fn code(self) -> u64 {
        match self {
            LossKind::Icu => 0,
            LossKind::Softmax => 1,
            LossKind::Center => 2,
            LossKind::Lgm => 3,
        }
    }

    pub(crate) fn from_code(code: u64) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("loss", format!("unknown loss {s:?}")))
    }
}

/// Hyperparameters of every loss family. Only the part matching the
/// model's head is used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings<T> {
    pub margins: MarginConfig<T>,
    pub center_lambda: T,
    pub lgm_alpha: T,
    pub lgm_lambda: T,
}

impl<T: Scalar> Default for LossSettings<T> {
    fn default() -> Self {
        Self {
            margins: MarginConfig::default(),
            center_lambda: T::lit(1e-3),
            lgm_alpha: T::lit(0.1),
            lgm_lambda: T::lit(0.1),
        }
    }
}

/// Classification head on top of the embedding.
#[derive(Clone, Debug, PartialEq)]
pub enum Head<T> {
    Icu(ClassGaussians<T>),
    Softmax(LinearClassifier<T>),
    Center {
        classifier: LinearClassifier<T>,
        centers: Centers<T>,
    },
    Lgm(LgmParams<T>),
}

/// Head gradients, in the same order as [`Head::parameters_mut`].
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGradients<T> {
    pub tensors: Vec<Array2<T>>,
}

impl<T: Scalar> Head<T> {
    pub fn init(
        kind: LossKind,
        num_classes: usize,
        dim: usize,
        settings: &LossSettings<T>,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(match kind {
            LossKind::Icu => Head::Icu(ClassGaussians::init(num_classes, dim, rng)?),
            LossKind::Softmax => Head::Softmax(LinearClassifier::init(num_classes, dim, rng)?),
            LossKind::Center => Head::Center {
                classifier: LinearClassifier::init(num_classes, dim, rng)?,
                centers: Centers::zeros(num_classes, dim, settings.center_lambda)?,
            },
            LossKind::Lgm => Head::Lgm(LgmParams::init(
                num_classes,
                dim,
                settings.lgm_alpha,
                settings.lgm_lambda,
                rng,
            )?),
        })
    }

    pub fn kind(&self) -> LossKind {
        match self {
            Head::Icu(_) => LossKind::Icu,
            Head::Softmax(_) => LossKind::Softmax,
            Head::Center { .. } => LossKind::Center,
            Head::Lgm(_) => LossKind::Lgm,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.anchors().nrows()
    }

    pub fn dim(&self) -> usize {
        self.anchors().ncols()
    }

    /// Per-class anchor rows: Gaussian means, classifier rows, or centroids.
    pub fn anchors(&self) -> &Array2<T> {
        match self {
            Head::Icu(p) => &p.mu,
            Head::Softmax(c) => &c.w,
            Head::Center { centers, .. } => &centers.c,
            Head::Lgm(p) => &p.mu,
        }
    }

    /// Per-class variances for the Gaussian heads.
    pub fn variances(&self) -> Option<Array2<T>> {
        match self {
            Head::Icu(p) => Some(p.variances()),
            Head::Lgm(p) => Some(p.log_var.mapv(T::exp)),
            _ => None,
        }
    }

    /// Inference with all training margins off.
    pub fn predict_batch(&self, embeddings: ArrayView2<T>) -> Result<Vec<usize>> {
        match self {
            Head::Icu(p) => head::predict_batch(embeddings, p),
            Head::Softmax(c) | Head::Center { classifier: c, .. } => c.predict_batch(embeddings),
            Head::Lgm(p) => baselines::lgm_predict_batch(embeddings, p),
        }
    }

    /// Loss value, gradient with respect to the embeddings, and head gradients.
    pub fn loss(
        &self,
        embeddings: ArrayView2<T>,
        labels: &[usize],
        margins: &MarginConfig<T>,
    ) -> Result<(T, Array2<T>, HeadGradients<T>)> {
        Ok(match self {
            Head::Icu(p) => {
                let (out, g) = head::icu_loss(embeddings, labels, p, margins)?;
                (
                    out.total,
                    g.d_x,
                    HeadGradients {
                        tensors: vec![g.d_mu, g.d_log_var],
                    },
                )
            }
            Head::Softmax(c) => {
                let out = baselines::softmax_ce(embeddings, labels, c)?;
                (out.loss, out.d_x, HeadGradients { tensors: vec![out.d_w] })
            }
            Head::Center { classifier, centers } => {
                let out = baselines::center_loss(embeddings, labels, classifier, centers)?;
                (
                    out.loss,
                    out.d_x,
                    HeadGradients {
                        tensors: vec![out.d_w, out.d_c],
                    },
                )
            }
            Head::Lgm(p) => {
                let out = baselines::lgm_loss(embeddings, labels, p)?;
                (
                    out.loss,
                    out.d_x,
                    HeadGradients {
                        tensors: vec![out.d_mu, out.d_log_var],
                    },
                )
            }
        })
    }

    /// Trainable tensors with their weight-decay flag. Gaussian means,
    /// log-variances and centroids are not decayed.
    pub fn parameters_mut(&mut self) -> Vec<(ArrayViewMutD<'_, T>, bool)> {
        match self {
            Head::Icu(p) => vec![
                (p.mu.view_mut().into_dyn(), false),
                (p.log_var.view_mut().into_dyn(), false),
            ],
            Head::Softmax(c) => vec![(c.w.view_mut().into_dyn(), true)],
            Head::Center { classifier, centers } => vec![
                (classifier.w.view_mut().into_dyn(), true),
                (centers.c.view_mut().into_dyn(), false),
            ],
            Head::Lgm(p) => vec![
                (p.mu.view_mut().into_dyn(), false),
                (p.log_var.view_mut().into_dyn(), false),
            ],
        }
    }

    fn after_step(&mut self) {
        match self {
            Head::Icu(p) => p.clamp_variances(),
            Head::Lgm(p) => p.clamp_variances(),
            Head::Softmax(_) | Head::Center { .. } => {}
        }
    }
}

/// Backbone plus head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub mlp: Mlp<T>,
    pub head: Head<T>,
}

impl<T: Scalar> Model<T> {
    /// The backbone and head draw from independent forks of `rng`.
    pub fn init(
        sizes: &[usize],
        kind: LossKind,
        num_classes: usize,
        settings: &LossSettings<T>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut net_rng = rng.fork();
        let mut head_rng = rng.fork();
        let mlp = Mlp::new(sizes, &mut net_rng)?;
        let head = Head::init(kind, num_classes, mlp.output_dim(), settings, &mut head_rng)?;
        Ok(Self { mlp, head })
    }

    pub fn new(mlp: Mlp<T>, head: Head<T>) -> Result<Self> {
        check_len("head dimension", mlp.output_dim(), head.dim())?;
        Ok(Self { mlp, head })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<T>,
        labels: &[usize],
        margins: &MarginConfig<T>,
    ) -> Result<(T, MlpGradients<T>, HeadGradients<T>)> {
        let (embeddings, cache) = self.mlp.forward(x)?;
        let (loss, d_emb, head_grads) = self.head.loss(embeddings.view(), labels, margins)?;
        let (net_grads, _) = self.mlp.backward(&cache, d_emb.view())?;
        Ok((loss, net_grads, head_grads))
    }

    pub fn apply_gradients(
        &mut self,
        optimizer: &mut OptimizerState<T>,
        net: &MlpGradients<T>,
        head: &HeadGradients<T>,
    ) -> Result<()> {
        check_len("layer gradients", self.mlp.layers.len(), net.layers.len())?;
        let mut params = Vec::new();
        for (layer, g) in self.mlp.layers.iter_mut().zip(&net.layers) {
            params.push(Param {
                value: layer.weight.view_mut().into_dyn(),
                grad: g.weight.view().into_dyn(),
                decay: true,
            });
            params.push(Param {
                value: layer.bias.view_mut().into_dyn(),
                grad: g.bias.view().into_dyn(),
                decay: true,
            });
        }
        let head_params = self.head.parameters_mut();
        check_len("head gradients", head_params.len(), head.tensors.len())?;
        for ((value, decay), grad) in head_params.into_iter().zip(&head.tensors) {
            params.push(Param {
                value,
                grad: grad.view().into_dyn(),
                decay,
            });
        }
        optimizer.step(&mut params)?;
        drop(params);
        self.head.after_step();
        Ok(())
    }

    pub fn embed(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.mlp.embed(x)
    }

    /// Predictions with margins off, computed in fixed-size chunks.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Vec<usize>> {
        const CHUNK: usize = 1024;
        let mut out = Vec::with_capacity(x.nrows());
        for chunk in x.axis_chunks_iter(Axis(0), CHUNK) {
            let emb = self.mlp.embed(chunk)?;
            out.extend(self.head.predict_batch(emb.view())?);
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    /// Sample-weighted mean of the minibatch losses seen during the epoch.
    pub mean_loss: f64,
    /// Accuracy on the full training set after the epoch's last step.
    pub train_accuracy: f64,
}

pub fn evaluate_accuracy<T: Scalar>(model: &Model<T>, dataset: &Dataset<T>) -> Result<f64> {
    check_len("dataset input dimension", model.input_dim(), dataset.input_dim())?;
    let predictions = model.predict(dataset.features.view())?;
    let correct = predictions.iter().zip(&dataset.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// One shuffled pass of minibatch training over `dataset`.
pub fn train_epoch<T: Scalar>(
    model: &mut Model<T>,
    dataset: &Dataset<T>,
    margins: &MarginConfig<T>,
    optimizer: &mut OptimizerState<T>,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<EpochMetrics> {
    check_len("dataset input dimension", model.input_dim(), dataset.input_dim())?;
    if dataset.num_classes > model.num_classes() {
        return Err(Error::ShapeMismatch {
            context: "number of classes",
            expected: model.num_classes(),
            found: dataset.num_classes,
        });
    }
    let mut weighted = Vec::new();
    for batch in batch_iter(dataset, batch_size, rng)? {
        let (loss, net_grads, head_grads) = model.loss_and_gradients(batch.features.view(), &batch.labels, margins)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        weighted.push(loss.as_f64() * batch.labels.len() as f64);
        model.apply_gradients(optimizer, &net_grads, &head_grads)?;
    }
    Ok(EpochMetrics {
        mean_loss: pairwise_sum(&weighted) / dataset.len() as f64,
        train_accuracy: evaluate_accuracy(model, dataset)?,
    })
}
