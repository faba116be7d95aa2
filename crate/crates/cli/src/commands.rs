use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use icu_core::checkpoint;
use icu_core::data::{read_csv, write_csv, LongTailSpec};
use icu_core::network::evaluate_accuracy;
use icu_core::oracle::{run_gradcheck_suite, Fault, SuiteConfig};
use icu_core::{Dataset, Model};
use serde::Serialize;

use crate::config::{require_compare, ExperimentConfig};
use crate::failure::{CliResult, Failure, Status};
use crate::run::{ensure_dir, fmt_float, load_data, metrics_csv, train_model, write_file, SplitName, Splits};

pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Global flags shared by every verb.
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Globals {
    fn config(&self) -> CliResult<ExperimentConfig> {
        let path = self
            .config
            .as_deref()
            .ok_or_else(|| Failure::config("--config is required"))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn counts_line(name: &str, data: &Dataset) -> String {
    let counts: Vec<String> = data.class_counts().iter().map(usize::to_string).collect();
    format!("{name}: {} samples, per class [{}]", data.len(), counts.join(", "))
}

pub fn gen_data(globals: &Globals, longtail_ratio: Option<f64>) -> CliResult<()> {
    let mut cfg = globals.config()?;
    if let Some(ratio) = longtail_ratio {
        if !(ratio.is_finite() && ratio > 1.0) {
            return Err(Failure::config(format!("invalid --longtail {ratio}: must be > 1")));
        }
        *cfg.data.longtail_mut() = Some(LongTailSpec {
            ratio,
            seed: cfg.seed,
            permute_classes: false,
        });
    }
    let splits = load_data(&cfg.data)?;
    ensure_dir(&cfg.out)?;
    for (name, data) in [("train", &splits.train), ("test", &splits.test)] {
        let path = cfg.out.join(format!("{name}.csv"));
        write_csv(data, &path).map_err(|e| Failure::new(Status::Failed, e.to_string()))?;
        println!("{}", counts_line(name, data));
    }
    Ok(())
}

pub fn train(globals: &Globals) -> CliResult<()> {
    let cfg = globals.config()?;
    let splits = load_data(&cfg.data)?;
    eprintln!("{}", counts_line("train", &splits.train));
    eprintln!("{}", counts_line("test", &splits.test));
    ensure_dir(&cfg.out)?;
    write_file(&cfg.out.join("resolved_config.json"), cfg.to_json())?;
    let outcome = train_model(&cfg, &splits, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.5}  train_acc {:.4}  test_acc {:.4}  {:.1}s",
            r.epoch, r.train_loss, r.train_accuracy, r.test_accuracy, r.wall_time_seconds
        );
    })?;
    write_file(&cfg.out.join("metrics.csv"), metrics_csv(&outcome.metrics))?;
    checkpoint::save(&outcome.model, cfg.out.join(CHECKPOINT_FILE))?;
    if let Some(last) = outcome.metrics.last() {
        println!("final test_acc {}", last.test_accuracy);
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> CliResult<Model> {
    if !path.is_file() {
        return Err(Failure::new(
            Status::MissingData,
            format!("missing checkpoint {}", path.display()),
        ));
    }
    checkpoint::load(path).map_err(|e| Failure::new(Status::Failed, format!("{}: {e}", path.display())))
}

/// Dataset selection for `eval` and `embed`: an explicit CSV file, or one
/// split of the config's data source.
pub struct DatasetChoice {
    pub csv: Option<PathBuf>,
    pub split: SplitName,
}

fn choose_dataset(globals: &Globals, choice: &DatasetChoice, model: &Model) -> CliResult<(Dataset, String)> {
    let data = match &choice.csv {
        Some(path) => {
            if !path.is_file() {
                return Err(Failure::new(
                    Status::MissingData,
                    format!("missing data file {}", path.display()),
                ));
            }
            let data: Dataset = read_csv(path, None).map_err(|e| Failure::data("loading CSV", e))?;
            (data, path.display().to_string())
        }
        None => {
            let cfg = globals.config()?;
            let Splits { train, test } = load_data(&cfg.data)?;
            let data = match choice.split {
                SplitName::Train => train,
                SplitName::Test => test,
            };
            (data, choice.split.as_str().to_string())
        }
    };
    if data.0.input_dim() != model.input_dim() {
        return Err(Failure::new(
            Status::Shape,
            format!(
                "checkpoint expects {} input features but the dataset has {}",
                model.input_dim(),
                data.0.input_dim()
            ),
        ));
    }
    if data.0.labels.iter().any(|&l| l >= model.num_classes()) {
        return Err(Failure::new(
            Status::Shape,
            format!("dataset labels exceed the checkpoint's {} classes", model.num_classes()),
        ));
    }
    Ok(data)
}

#[derive(Serialize)]
struct EvalReport<'a> {
    checkpoint: &'a str,
    dataset: &'a str,
    samples: usize,
    correct: usize,
    accuracy: f64,
}

pub fn eval(globals: &Globals, checkpoint_path: &Path, choice: &DatasetChoice) -> CliResult<()> {
    let model = load_checkpoint(checkpoint_path)?;
    let (data, name) = choose_dataset(globals, choice, &model)?;
    let accuracy = evaluate_accuracy(&model, &data)?;
    let report = EvalReport {
        checkpoint: &checkpoint_path.display().to_string(),
        dataset: &name,
        samples: data.len(),
        correct: (accuracy * data.len() as f64).round() as usize,
        accuracy,
    };
    let out = globals.out_dir();
    ensure_dir(&out)?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_file(&out.join("eval.json"), json)?;
    println!("accuracy {accuracy}");
    Ok(())
}

pub fn embed(globals: &Globals, checkpoint_path: &Path, choice: &DatasetChoice, allow_highdim: bool) -> CliResult<()> {
    let model = load_checkpoint(checkpoint_path)?;
    let dim = model.head.dim();
    if dim != 2 && !allow_highdim {
        return Err(Failure::new(
            Status::Shape,
            format!("embedding dimension is {dim}, not 2; pass --allow-highdim to export all {dim} columns"),
        ));
    }
    let (data, _) = choose_dataset(globals, choice, &model)?;
    let embeddings = model.embed(data.features.view())?;

    let mut csv = String::from("label");
    for d in 0..dim {
        write!(csv, ",e{d}").expect("write to String");
    }
    csv.push('\n');
    for (row, label) in embeddings.outer_iter().zip(&data.labels) {
        csv.push_str(&label.to_string());
        for v in row {
            write!(csv, ",{}", fmt_float(*v)).expect("write to String");
        }
        csv.push('\n');
    }

    // Heads without variances leave the var columns empty.
    let anchors = model.head.anchors();
    let variances = model.head.variances();
    let mut params = String::from("class");
    for prefix in ["mu", "var"] {
        for d in 0..dim {
            write!(params, ",{prefix}{d}").expect("write to String");
        }
    }
    params.push('\n');
    for k in 0..anchors.nrows() {
        params.push_str(&k.to_string());
        for d in 0..dim {
            write!(params, ",{}", fmt_float(anchors[[k, d]])).expect("write to String");
        }
        for d in 0..dim {
            match &variances {
                Some(v) => write!(params, ",{}", fmt_float(v[[k, d]])),
                None => write!(params, ","),
            }
            .expect("write to String");
        }
        params.push('\n');
    }

    let out = globals.out_dir();
    ensure_dir(&out)?;
    write_file(&out.join("embeddings.csv"), csv)?;
    write_file(&out.join("class_params.csv"), params)?;
    println!("wrote {} embeddings and {} class rows", data.len(), anchors.nrows());
    Ok(())
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn compare(globals: &Globals) -> CliResult<()> {
    let cfg = globals.config()?;
    let compare = require_compare(&cfg)?.clone();
    let splits = load_data(&cfg.data)?;
    ensure_dir(&cfg.out)?;
    write_file(&cfg.out.join("resolved_config.json"), cfg.to_json())?;

    let mut rows = String::from("variant,seed,test_acc,test_acc_std\n");
    let mut summary = String::new();
    for variant in &compare.variants {
        let mut accs = Vec::with_capacity(compare.seeds.len());
        for &seed in &compare.seeds {
            let run_cfg = cfg.with_variant(variant, seed);
            let outcome = train_model(&run_cfg, &splits, |_| {})?;
            let acc = outcome.final_test_accuracy(&splits)?;
            eprintln!("{} seed {seed}: test_acc {acc:.4}", variant.name);
            writeln!(rows, "{},{seed},{},", variant.name, fmt_float(acc)).expect("write to String");
            accs.push(acc);
        }
        let (mean, std) = mean_and_sample_std(&accs);
        writeln!(summary, "{},mean,{},{}", variant.name, fmt_float(mean), fmt_float(std)).expect("write to String");
        println!("{:<24} mean {:.4}  std {:.4}", variant.name, mean, std);
    }
    rows.push_str(&summary);
    write_file(&cfg.out.join("compare.csv"), rows)
}

pub fn gradcheck(globals: &Globals, instances: usize, inject_fault: bool) -> CliResult<()> {
    let cfg = SuiteConfig {
        seed: globals.seed.unwrap_or(0),
        instances,
        fault: inject_fault.then_some(Fault::FlipIcuMeanGradient),
        ..SuiteConfig::default()
    };
    let report = run_gradcheck_suite(&cfg)?;
    print!("{report}");
    if report.pass() {
        println!("gradcheck passed (tolerance {:e})", cfg.tol);
        Ok(())
    } else {
        Err(Failure::new(
            Status::Failed,
            format!("gradcheck failed (tolerance {:e})", cfg.tol),
        ))
    }
}
