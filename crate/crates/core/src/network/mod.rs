//! Dense ReLU backbone producing embeddings, with analytic backprop.

mod optim;
mod train;

pub use optim::{OptimizerKind, OptimizerState, Param};
pub use train::{evaluate_accuracy, train_epoch, EpochMetrics, Head, HeadGradients, LossKind, LossSettings, Model};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{check_len, Error, Result};
use crate::math::{Rng, Scalar};

/// `y = x Wᵀ + b`; `weight` is `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> DenseLayer<T> {
    /// He-uniform weights, `U(±sqrt(6 / fan_in))`, and zero bias.
    pub fn he_uniform(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((fan_out, fan_in), || T::lit(rng.uniform_range(-bound, bound))),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// ReLU between layers, identity on the final (embedding) layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<DenseLayer<T>>,
}

/// Layer inputs recorded by [`Mlp::forward`]: `inputs[l]` is what layer `l`
/// consumed. A hidden unit was active iff its recorded output is positive.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    inputs: Vec<Array2<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGradients<T> {
    pub layers: Vec<LayerGradients<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// `sizes` lists the input width, any hidden widths, and the embedding width.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid("layer sizes", "need at least input and output widths"));
        }
        if sizes.contains(&0) {
            return Err(Error::invalid("layer sizes", "widths must be positive"));
        }
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer::he_uniform(w[0], w[1], rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("layers", "need at least one layer"));
        }
        for layer in &layers {
            check_len("bias length", layer.output_dim(), layer.bias.len())?;
        }
        for pair in layers.windows(2) {
            check_len("layer chaining", pair[0].output_dim(), pair[1].input_dim())?;
        }
        Ok(Self { layers })
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::output_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    fn affine(layer: &DenseLayer<T>, input: &ArrayView2<T>) -> Array2<T> {
        let mut z = input.dot(&layer.weight.t());
        z += &layer.bias;
        z
    }

    /// Embeddings only, without recording a cache.
    pub fn embed(&self, batch: ArrayView2<T>) -> Result<Array2<T>> {
        check_len("network input", self.input_dim(), batch.ncols())?;
        let mut act = Self::affine(&self.layers[0], &batch);
        for layer in &self.layers[1..] {
            relu_inplace(&mut act);
            act = Self::affine(layer, &act.view());
        }
        Ok(act)
    }

    pub fn forward(&self, batch: ArrayView2<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        check_len("network input", self.input_dim(), batch.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(batch.to_owned());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Self::affine(layer, &inputs[l].view());
            if l == last {
                return Ok((z, ForwardCache { inputs }));
            }
            relu_inplace(&mut z);
            inputs.push(z);
        }
        unreachable!("network has at least one layer")
    }

    /// Pre-activations of every hidden layer, for locating ReLU kinks.
    pub fn hidden_preactivations(&self, batch: ArrayView2<T>) -> Result<Vec<Array2<T>>> {
        check_len("network input", self.input_dim(), batch.ncols())?;
        let mut out = Vec::new();
        let mut act = batch.to_owned();
        for layer in &self.layers[..self.layers.len() - 1] {
            let z = Self::affine(layer, &act.view());
            act = z.clone();
            relu_inplace(&mut act);
            out.push(z);
        }
        Ok(out)
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_embeddings: ArrayView2<T>,
    ) -> Result<(MlpGradients<T>, Array2<T>)> {
        check_len("cache depth", self.layers.len(), cache.inputs.len())?;
        let batch = cache.inputs[0].nrows();
        check_len("gradient rows", batch, d_embeddings.nrows())?;
        check_len("gradient columns", self.output_dim(), d_embeddings.ncols())?;
        for (layer, input) in self.layers.iter().zip(&cache.inputs) {
            check_len("cached activation width", layer.input_dim(), input.ncols())?;
            check_len("cached activation rows", batch, input.nrows())?;
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_embeddings.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[l];
            grads.push(LayerGradients {
                weight: delta.t().dot(input),
                bias: delta.sum_axis(Axis(0)),
            });
            let mut d_input = delta.dot(&layer.weight);
            if l > 0 {
                // ReLU subgradient is 0 at exactly 0.
                Zip::from(&mut d_input).and(input).for_each(|g, &a| {
                    if a <= T::zero() {
                        *g = T::zero();
                    }
                });
            }
            delta = d_input;
        }
        grads.reverse();
        Ok((MlpGradients { layers: grads }, delta))
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}

fn relu_inplace<T: Scalar>(a: &mut Array2<T>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}
