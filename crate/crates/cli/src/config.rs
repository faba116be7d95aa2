//! Experiment configuration files (JSON, unknown keys rejected).

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use icu_core::data::{GmmSpec, LongTailSpec};
use icu_core::network::{LossKind, OptimizerKind};
use icu_core::{LossSettings, MarginConfig};
use serde::{Deserialize, Serialize};

use crate::failure::{CliResult, Failure, Status};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    /// Hidden layer widths between the input and the embedding.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub margins: MarginsConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Write measured seconds to `wall_s`. Off by default so repeated runs
    /// produce byte-identical files.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareConfig>,
}

fn default_loss() -> LossKind {
    LossKind::Icu
}
fn default_hidden() -> Vec<usize> {
    vec![128]
}
fn default_embedding_dim() -> usize {
    2
}
fn default_epochs() -> usize {
    10
}
fn default_batch_size() -> usize {
    128
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_optimizer")]
    pub kind: OptimizerKind,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_learning_rate() -> f64 {
    0.01
}
fn default_weight_decay() -> f64 {
    0.001
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: default_optimizer(),
            learning_rate: default_learning_rate(),
            weight_decay: default_weight_decay(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginsConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_lambda")]
    pub lambda1: f64,
    #[serde(default = "default_lambda")]
    pub lambda2: f64,
}

fn default_alpha() -> f64 {
    MarginConfig::default().alpha
}
fn default_gamma() -> f64 {
    MarginConfig::default().gamma
}
fn default_lambda() -> f64 {
    MarginConfig::default().lambda1
}

impl Default for MarginsConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            gamma: default_gamma(),
            lambda1: default_lambda(),
            lambda2: default_lambda(),
        }
    }
}

impl From<MarginsConfig> for MarginConfig {
    fn from(m: MarginsConfig) -> Self {
        MarginConfig {
            alpha: m.alpha,
            gamma: m.gamma,
            lambda1: m.lambda1,
            lambda2: m.lambda2,
        }
    }
}

/// Hyperparameters of the comparison losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default = "default_center_lambda")]
    pub center_lambda: f64,
    #[serde(default = "default_lgm_alpha")]
    pub lgm_alpha: f64,
    #[serde(default = "default_lgm_lambda")]
    pub lgm_lambda: f64,
}

fn default_center_lambda() -> f64 {
    LossSettings::default().center_lambda
}
fn default_lgm_alpha() -> f64 {
    LossSettings::default().lgm_alpha
}
fn default_lgm_lambda() -> f64 {
    LossSettings::default().lgm_lambda
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            center_lambda: default_center_lambda(),
            lgm_alpha: default_lgm_alpha(),
            lgm_lambda: default_lgm_lambda(),
        }
    }
}

/// Where the train and test splits come from. A long-tail profile, when
/// present, subsamples the training split only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    Mnist {
        /// Directory holding the four standard IDX files.
        dir: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        longtail: Option<LongTailSpec>,
    },
    Synthetic {
        train: GmmSpec,
        test: GmmSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        longtail: Option<LongTailSpec>,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        num_classes: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        longtail: Option<LongTailSpec>,
    },
}

impl DataConfig {
    pub fn longtail_mut(&mut self) -> &mut Option<LongTailSpec> {
        match self {
            DataConfig::Mnist { longtail, .. }
            | DataConfig::Synthetic { longtail, .. }
            | DataConfig::Csv { longtail, .. } => longtail,
        }
    }
}

/// Loss/margin variants run over a shared list of seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

/// Overrides applied on top of the base config. Missing fields inherit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margins: Option<MarginsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baselines: Option<BaselineConfig>,
}

fn check(ok: bool, field: &str, reason: &str) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(Failure::config(format!("invalid config field `{field}`: {reason}")))
    }
}

fn non_negative(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Failure::config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        check(
            self.schema_version == SCHEMA_VERSION,
            "schema_version",
            &format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
        )?;
        check(
            self.hidden.iter().all(|&w| w >= 1),
            "hidden",
            "layer widths must be >= 1",
        )?;
        check(self.embedding_dim >= 1, "embedding_dim", "must be >= 1")?;
        check(self.batch_size >= 1, "batch_size", "must be >= 1")?;
        check(
            non_negative(self.optimizer.learning_rate),
            "optimizer.learning_rate",
            "must be finite and >= 0",
        )?;
        check(
            non_negative(self.optimizer.weight_decay),
            "optimizer.weight_decay",
            "must be finite and >= 0",
        )?;
        validate_margins(&self.margins, "margins")?;
        validate_baselines(&self.baselines, "baselines")?;
        if let Some(compare) = &self.compare {
            check(
                compare.variants.len() >= 2,
                "compare.variants",
                "need at least two variants",
            )?;
            check(!compare.seeds.is_empty(), "compare.seeds", "need at least one seed")?;
            let mut names = HashSet::new();
            for v in &compare.variants {
                check(
                    !v.name.is_empty() && !v.name.contains([',', '"', '\n', '\r']),
                    "compare.variants.name",
                    "must be non-empty without commas, quotes or newlines",
                )?;
                check(
                    names.insert(v.name.as_str()),
                    "compare.variants.name",
                    &format!("duplicate {:?}", v.name),
                )?;
                if let Some(m) = &v.margins {
                    validate_margins(m, "compare.variants.margins")?;
                }
                if let Some(b) = &v.baselines {
                    validate_baselines(b, "compare.variants.baselines")?;
                }
            }
        }
        match &self.data {
            DataConfig::Csv { num_classes, .. } => check(*num_classes >= 2, "data.num_classes", "must be >= 2")?,
            DataConfig::Synthetic { train, test, .. } => {
                check(
                    train.classes.len() == test.classes.len(),
                    "data.test",
                    "must have as many classes as data.train",
                )?;
                check(
                    train.classes.len() >= 2,
                    "data.train.classes",
                    "need at least two classes",
                )?;
                for (field, spec) in [("data.train", train), ("data.test", test)] {
                    spec.validate()
                        .map_err(|e| Failure::config(format!("invalid config field `{field}`: {e}")))?;
                }
            }
            DataConfig::Mnist { .. } => {}
        }
        let longtail = match &self.data {
            DataConfig::Mnist { longtail, .. }
            | DataConfig::Synthetic { longtail, .. }
            | DataConfig::Csv { longtail, .. } => longtail,
        };
        if let Some(lt) = longtail {
            check(
                lt.ratio.is_finite() && lt.ratio > 1.0,
                "data.longtail.ratio",
                "must be > 1",
            )?;
        }
        Ok(())
    }

    /// Layer widths from the input through the embedding.
    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.embedding_dim);
        sizes
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            margins: self.margins.into(),
            center_lambda: self.baselines.center_lambda,
            lgm_alpha: self.baselines.lgm_alpha,
            lgm_lambda: self.baselines.lgm_lambda,
        }
    }

    /// Copy with a variant's overrides applied and the compare section dropped.
    pub fn with_variant(&self, variant: &Variant, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.compare = None;
        cfg.seed = seed;
        if let Some(loss) = variant.loss {
            cfg.loss = loss;
        }
        if let Some(m) = variant.margins {
            cfg.margins = m;
        }
        if let Some(b) = variant.baselines {
            cfg.baselines = b;
        }
        cfg
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

fn validate_margins(m: &MarginsConfig, prefix: &str) -> CliResult<()> {
    for (name, v) in [
        ("alpha", m.alpha),
        ("gamma", m.gamma),
        ("lambda1", m.lambda1),
        ("lambda2", m.lambda2),
    ] {
        check(non_negative(v), &format!("{prefix}.{name}"), "must be finite and >= 0")?;
    }
    Ok(())
}

fn validate_baselines(b: &BaselineConfig, prefix: &str) -> CliResult<()> {
    for (name, v) in [
        ("center_lambda", b.center_lambda),
        ("lgm_alpha", b.lgm_alpha),
        ("lgm_lambda", b.lgm_lambda),
    ] {
        check(non_negative(v), &format!("{prefix}.{name}"), "must be finite and >= 0")?;
    }
    Ok(())
}

pub fn require_compare(cfg: &ExperimentConfig) -> CliResult<&CompareConfig> {
    cfg.compare.as_ref().ok_or_else(|| {
        Failure::new(
            Status::Config,
            "invalid config field `compare`: required by the compare command",
        )
    })
}
