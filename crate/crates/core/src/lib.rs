//! Gaussian class-conditional classification heads with learned per-class
//! variances ("intra-class uncertainty"), inter- and intra-class margins and a
//! moment-matching regularizer, together with the softmax, center-loss and
//! L-GM baselines, a small dense backbone with analytic backprop, dataset
//! tooling and a Bayes / finite-difference oracle for verification.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! at the crate root fix the scalar to `f64`, which is what the training
//! pipeline and the gradient checks use.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod head;
pub mod math;
pub mod network;
pub mod oracle;

pub use error::{Error, Result};
pub use math::{Rng, Scalar};

pub type ClassGaussians = head::ClassGaussians<f64>;
pub type MarginConfig = head::MarginConfig<f64>;
pub type BatchMoments = head::BatchMoments<f64>;
pub type GradientBundle = head::GradientBundle<f64>;
pub type LossOutput = head::LossOutput<f64>;

pub type LinearClassifier = baselines::LinearClassifier<f64>;
pub type Centers = baselines::Centers<f64>;
pub type LgmParams = baselines::LgmParams<f64>;

pub type Mlp = network::Mlp<f64>;
pub type Model = network::Model<f64>;
pub type Head = network::Head<f64>;
pub type LossSettings = network::LossSettings<f64>;
pub type OptimizerState = network::OptimizerState<f64>;

pub type Dataset = data::Dataset<f64>;
pub type TrueGmm = oracle::TrueGmm<f64>;
