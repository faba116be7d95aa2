//! Data loading and the training loop shared by `train` and `compare`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use icu_core::data::{gen_gmm, load_mnist_idx, longtail_subsample, read_csv};
use icu_core::network::{evaluate_accuracy, train_epoch};
use icu_core::{Dataset, Model, OptimizerState, Rng};

use crate::config::{DataConfig, ExperimentConfig};
use crate::failure::{io_failure, CliResult, Failure, Status};

pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn num_classes(&self) -> usize {
        self.train.num_classes.max(self.test.num_classes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Test => "test",
        }
    }
}

fn mnist_split(dir: &Path, prefix: &str) -> CliResult<Dataset> {
    let images = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let labels = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    for path in [&images, &labels] {
        if !path.is_file() {
            return Err(Failure::new(
                Status::MissingData,
                format!("missing MNIST file {} (see scripts/fetch_mnist.sh)", path.display()),
            ));
        }
    }
    load_mnist_idx(&images, &labels).map_err(|e| Failure::data("loading MNIST", e))
}

fn csv_split(path: &Path, num_classes: usize) -> CliResult<Dataset> {
    if !path.is_file() {
        return Err(Failure::new(
            Status::MissingData,
            format!("missing data file {}", path.display()),
        ));
    }
    read_csv(path, Some(num_classes)).map_err(|e| Failure::data("loading CSV", e))
}

pub fn load_data(data: &DataConfig) -> CliResult<Splits> {
    let (train, test, longtail) = match data {
        DataConfig::Mnist { dir, longtail } => (mnist_split(dir, "train")?, mnist_split(dir, "t10k")?, longtail),
        DataConfig::Synthetic { train, test, longtail } => (
            gen_gmm(train).map_err(|e| Failure::data("data.train", e))?,
            gen_gmm(test).map_err(|e| Failure::data("data.test", e))?,
            longtail,
        ),
        DataConfig::Csv {
            train,
            test,
            num_classes,
            longtail,
        } => (
            csv_split(train, *num_classes)?,
            csv_split(test, *num_classes)?,
            longtail,
        ),
    };
    if train.input_dim() != test.input_dim() {
        return Err(Failure::new(
            Status::Shape,
            format!(
                "train inputs have {} features but test inputs have {}",
                train.input_dim(),
                test.input_dim()
            ),
        ));
    }
    let train = match longtail {
        Some(spec) => longtail_subsample(&train, spec).map_err(|e| Failure::data("data.longtail", e))?,
        None => train,
    };
    Ok(Splits { train, test })
}

/// One row of `metrics.csv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub wall_time_seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_acc,wall_s";

/// 17 significant digits, matching the dataset CSV writer.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            fmt_float(r.train_loss),
            fmt_float(r.train_accuracy),
            fmt_float(r.test_accuracy),
            fmt_float(r.wall_time_seconds)
        )
        .expect("write to String");
    }
    out
}

pub struct RunOutcome {
    pub model: Model,
    pub metrics: Vec<MetricsRecord>,
}

impl RunOutcome {
    /// Test accuracy after the last epoch, or of the initial model when no
    /// epochs ran.
    pub fn final_test_accuracy(&self, splits: &Splits) -> CliResult<f64> {
        match self.metrics.last() {
            Some(r) => Ok(r.test_accuracy),
            None => Ok(evaluate_accuracy(&self.model, &splits.test)?),
        }
    }
}

/// Seeds the model from `cfg.seed` and trains for `cfg.epochs` epochs,
/// calling `on_epoch` after each one.
pub fn train_model(
    cfg: &ExperimentConfig,
    splits: &Splits,
    mut on_epoch: impl FnMut(&MetricsRecord),
) -> CliResult<RunOutcome> {
    let mut rng = Rng::new(cfg.seed);
    let sizes = cfg.layer_sizes(splits.train.input_dim());
    let mut model = Model::init(&sizes, cfg.loss, splits.num_classes(), &cfg.loss_settings(), &mut rng)?;
    let mut optimizer = OptimizerState::new(
        cfg.optimizer.kind,
        cfg.optimizer.learning_rate,
        cfg.optimizer.weight_decay,
    )?;
    let margins = cfg.margins.into();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let m = train_epoch(
            &mut model,
            &splits.train,
            &margins,
            &mut optimizer,
            cfg.batch_size,
            &mut rng,
        )
        .map_err(|e| Failure::new(Status::Failed, format!("epoch {epoch}: {e}")))?;
        let test_accuracy = evaluate_accuracy(&model, &splits.test)?;
        let elapsed = start.elapsed().as_secs_f64();
        let record = MetricsRecord {
            epoch,
            train_loss: m.mean_loss,
            train_accuracy: m.train_accuracy,
            test_accuracy,
            wall_time_seconds: if cfg.record_wall_time { elapsed } else { 0.0 },
        };
        on_epoch(&MetricsRecord {
            wall_time_seconds: elapsed,
            ..record
        });
        metrics.push(record);
    }
    Ok(RunOutcome { model, metrics })
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| io_failure(path, e))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}
