//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! a summary. With `ICU_ACCEPTANCE_STRICT=1` the process exits non-zero when
//! any criterion fails. Criterion numbers given as arguments
//! (`cargo test --test acceptance -- 1 3`) restrict the run.
//!
//! The MNIST criteria look for the IDX files in `$ICU_MNIST_DIR`, then
//! `<workspace>/data/mnist`, then `/root/data/mnist`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use icu_core::baselines::{lgm_predict, LgmParams};
use icu_core::data::{gen_gmm, GmmSpec};
use icu_core::head::{
    decision_distance, icu_loss_forward, margin_boundary_check, posterior, predict, ClassGaussians, MarginConfig,
};
use icu_core::math::sample_standard_normal;
use icu_core::oracle::{bayes_predict, narrow_wide_mixture, TrueGmm, NARROW_WIDE_BAYES_ACCURACY};
use icu_core::{Dataset, Rng};
use ndarray::{Array1, Array2};
use serde_json::Value;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    check: fn(&Ctx) -> Outcome,
}

struct Ctx {
    root: PathBuf,
    scratch: tempfile::TempDir,
}

impl Ctx {
    fn config(&self, name: &str) -> PathBuf {
        self.root.join("configs").join(name)
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.scratch.path().join(name)
    }
}

fn icu(args: &[&str]) -> Result<Output, String> {
    Command::new(env!("CARGO_BIN_EXE_icu"))
        .args(args)
        .output()
        .map_err(|e| format!("spawning icu: {e}"))
}

fn icu_ok(args: &[&str]) -> Result<Output, String> {
    let out = icu(args)?;
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!(
            "`icu {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &Value) -> Result<(), String> {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).map_err(|e| format!("{}: {e}", path.display()))
}

fn mnist_dir(root: &Path) -> Option<PathBuf> {
    let candidates = std::env::var_os("ICU_MNIST_DIR")
        .map(PathBuf::from)
        .into_iter()
        .chain([root.join("data/mnist"), PathBuf::from("/root/data/mnist")]);
    for dir in candidates {
        let complete = [
            "train-images-idx3-ubyte",
            "train-labels-idx1-ubyte",
            "t10k-images-idx3-ubyte",
            "t10k-labels-idx1-ubyte",
        ]
        .iter()
        .all(|f| dir.join(f).is_file());
        if complete {
            return Some(dir);
        }
    }
    None
}

/// Copies a shipped MNIST config into scratch space with `data.dir` pointing
/// at the local IDX files.
fn patched_mnist_config(ctx: &Ctx, name: &str) -> Result<PathBuf, String> {
    let dir =
        mnist_dir(&ctx.root).ok_or("MNIST IDX files not found; run scripts/fetch_mnist.sh or set ICU_MNIST_DIR")?;
    let mut cfg = read_json(&ctx.config(name))?;
    cfg["data"]["dir"] = Value::String(path_str(&dir).to_string());
    let path = ctx.dir(name);
    write_json(&path, &cfg)?;
    Ok(path)
}

/// `(variant, mean)` pairs from the summary rows of `compare.csv`.
fn compare_means(path: &Path) -> Result<Vec<(String, f64)>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut means = Vec::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() == 4 && fields[1] == "mean" {
            let mean = fields[2]
                .parse::<f64>()
                .map_err(|e| format!("bad mean in `{line}`: {e}"))?;
            means.push((fields[0].to_string(), mean));
        }
    }
    Ok(means)
}

fn mean_of(means: &[(String, f64)], name: &str) -> Result<f64, String> {
    means
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, m)| *m)
        .ok_or_else(|| format!("no summary row for `{name}`"))
}

fn gradient_correctness(_: &Ctx) -> Outcome {
    let out = icu_ok(&["gradcheck", "--instances", "100"])?;
    let report = String::from_utf8_lossy(&out.stdout);
    let losses = ["icu", "softmax", "center", "lgm", "mlp"];
    for loss in losses {
        if !report
            .lines()
            .any(|l| l.split_whitespace().next() == Some(loss) && l.contains("PASS"))
        {
            return Err(format!("no passing line for `{loss}` in report:\n{report}"));
        }
    }
    Ok(format!("{} checks passed at 1e-5", losses.len()))
}

fn random_gaussians(rng: &mut Rng, k: usize, d: usize) -> ClassGaussians<f64> {
    ClassGaussians::new(
        Array2::from_shape_simple_fn((k, d), || 2.0 * sample_standard_normal(rng)),
        Array2::from_shape_simple_fn((k, d), || rng.uniform_range(-2.0, 2.0)),
    )
    .unwrap()
}

fn bayes_equivalence(_: &Ctx) -> Outcome {
    let mut rng = Rng::new(2);
    let params = random_gaussians(&mut rng, 6, 3);
    let gmm = TrueGmm::equal_priors(params.mu.clone(), params.variances()).map_err(|e| e.to_string())?;
    let n = 10_000;
    let mut agree = 0;
    for _ in 0..n {
        let (x, _) = gmm.sample(&mut rng);
        let x = Array1::from(x);
        if predict(x.view(), &params).map_err(|e| e.to_string())?
            == bayes_predict(x.view(), &gmm).map_err(|e| e.to_string())?
        {
            agree += 1;
        }
    }
    if agree == n {
        Ok(format!("{agree}/{n} predictions agree"))
    } else {
        Err(format!("only {agree}/{n} predictions agree"))
    }
}

fn accuracy(predictions: impl Iterator<Item = usize>, data: &Dataset) -> f64 {
    let correct = predictions.zip(&data.labels).filter(|(p, l)| p == *l).count();
    correct as f64 / data.len() as f64
}

fn narrow_wide(ctx: &Ctx) -> Outcome {
    let config = ctx.config("narrow_wide.json");
    let out = ctx.dir("narrow_wide");
    icu_ok(&["train", "--config", path_str(&config), "--out", path_str(&out)])?;
    let metrics = fs::read_to_string(out.join("metrics.csv")).map_err(|e| e.to_string())?;
    let last = metrics.lines().last().ok_or("empty metrics.csv")?;
    let trained: f64 = last
        .split(',')
        .nth(3)
        .ok_or("short metrics row")?
        .parse()
        .map_err(|e| format!("test_acc: {e}"))?;
    let gap = (trained - NARROW_WIDE_BAYES_ACCURACY).abs();

    let cfg = read_json(&config)?;
    let spec: GmmSpec = serde_json::from_value(cfg["data"]["test"].clone()).map_err(|e| e.to_string())?;
    let test: Dataset = gen_gmm(&spec).map_err(|e| e.to_string())?;
    let gmm = narrow_wide_mixture();
    let lgm = LgmParams::new(gmm.means.clone(), gmm.vars.mapv(f64::ln), 0.0, 0.0).map_err(|e| e.to_string())?;
    let bayes = accuracy(
        test.features.outer_iter().map(|x| bayes_predict(x, &gmm).unwrap()),
        &test,
    );
    let lgm_acc = accuracy(test.features.outer_iter().map(|x| lgm_predict(x, &lgm).unwrap()), &test);

    let detail = format!(
        "trained {trained:.5} vs reference {NARROW_WIDE_BAYES_ACCURACY} (gap {:.3} pp); lgm rule {lgm_acc:.5} vs bayes {bayes:.5}",
        100.0 * gap
    );
    if gap <= 0.005 && lgm_acc < bayes {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn margin_identities(_: &Ctx) -> Outcome {
    let mut rng = Rng::new(4);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (k, d) = (2 + rng.below(4), 1 + rng.below(5));
        let params = random_gaussians(&mut rng, k, d);
        let x: Array1<f64> = (0..d).map(|_| 3.0 * sample_standard_normal(&mut rng)).collect();
        let class = rng.below(k);
        let gamma = rng.uniform_range(0.0, 10.0);
        let plain = decision_distance(x.view(), class, &params, 0.0).map_err(|e| e.to_string())?;
        let shifted = decision_distance(x.view(), class, &params, gamma).map_err(|e| e.to_string())?;
        let expected = plain + 0.5 * gamma.ln_1p();
        worst = worst.max((shifted - expected).abs() / (f64::EPSILON * expected.abs().max(1.0)));
    }
    if worst > 4.0 {
        return Err(format!("gamma shift off by {worst:.1} ulp"));
    }
    for i in 0..1000 {
        let s_gt = 10f64.powf(rng.uniform_range(-3.0, 3.0));
        let s_other = 10f64.powf(rng.uniform_range(-3.0, 3.0));
        let gamma = rng.uniform_range(0.0, 3.0);
        let params = ClassGaussians::from_variances(ndarray::array![[0.0], [10.0]], ndarray::array![[s_gt], [s_other]])
            .map_err(|e| e.to_string())?;
        let d_gt = decision_distance(ndarray::array![s_gt.sqrt()].view(), 0, &params, gamma).unwrap() - 0.5;
        let d_other = decision_distance(ndarray::array![10.0 + s_other.sqrt()].view(), 1, &params, 0.0).unwrap() - 0.5;
        if margin_boundary_check(s_gt, s_other, gamma) != (d_gt < d_other) {
            return Err(format!(
                "boundary disagreement on triple {i}: ({s_gt}, {s_other}, {gamma})"
            ));
        }
    }
    Ok(format!(
        "gamma shift within {worst:.1} ulp on 10000 inputs; 1000 boundary triples agree"
    ))
}

fn reduction_identity(_: &Ctx) -> Outcome {
    let mut rng = Rng::new(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (n, k, d) = (1 + rng.below(16), 2 + rng.below(5), 1 + rng.below(4));
        let params = random_gaussians(&mut rng, k, d);
        let x = Array2::from_shape_simple_fn((n, d), || 2.0 * sample_standard_normal(&mut rng));
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let loss = icu_loss_forward(x.view(), &labels, &params, &MarginConfig::zero()).map_err(|e| e.to_string())?;
        let nll = x
            .outer_iter()
            .zip(&labels)
            .map(|(row, &z)| -posterior(row, &params).unwrap()[z].ln())
            .sum::<f64>()
            / n as f64;
        worst = worst.max((loss.total - nll).abs());
    }
    if worst <= 1e-12 {
        Ok(format!("max difference {worst:.2e} over 200 instances"))
    } else {
        Err(format!("max difference {worst:.2e} exceeds 1e-12"))
    }
}

fn mnist_ordering(ctx: &Ctx, config: &str, out: &str, need_floor: bool) -> Outcome {
    let config = patched_mnist_config(ctx, config)?;
    let out = ctx.dir(out);
    icu_ok(&["compare", "--config", path_str(&config), "--out", path_str(&out)])?;
    let means = compare_means(&out.join("compare.csv"))?;
    let icu_mean = mean_of(&means, "icu")?;
    let softmax_mean = mean_of(&means, "softmax")?;
    let detail = format!("icu mean {icu_mean:.4}, softmax mean {softmax_mean:.4}");
    let floor_ok = !need_floor || (icu_mean >= 0.96 && softmax_mean >= 0.96);
    if icu_mean >= softmax_mean && floor_ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mnist_balanced(ctx: &Ctx) -> Outcome {
    mnist_ordering(ctx, "mnist_compare.json", "mnist_compare", true)
}

fn mnist_longtail(ctx: &Ctx) -> Outcome {
    mnist_ordering(ctx, "mnist_longtail.json", "mnist_longtail", false)
}

fn margin_ablation(ctx: &Ctx) -> Outcome {
    let config = ctx.config("margin_ablation.json");
    let mut outputs = Vec::new();
    for run in ["ablation_a", "ablation_b"] {
        let out = ctx.dir(run);
        icu_ok(&["compare", "--config", path_str(&config), "--out", path_str(&out)])?;
        outputs.push(fs::read(out.join("compare.csv")).map_err(|e| e.to_string())?);
    }
    if outputs[0] != outputs[1] {
        return Err("compare.csv differs between identical runs".into());
    }
    let means = compare_means(&ctx.dir("ablation_a").join("compare.csv"))?;
    let names: Vec<&str> = means.iter().map(|(n, _)| n.as_str()).collect();
    if names != ["no_margins", "alpha_only", "gamma_only", "both"] {
        return Err(format!("unexpected variant grid {names:?}"));
    }
    Ok(means
        .iter()
        .map(|(n, m)| format!("{n} {m:.4}"))
        .collect::<Vec<_>>()
        .join(", "))
}

fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        files.push((name, fs::read(&path).map_err(|e| e.to_string())?));
    }
    files.sort();
    Ok(files)
}

fn determinism(ctx: &Ctx) -> Outcome {
    let blobs = ctx.config("blobs.json");
    let gen = ctx.config("gen_two_class.json");
    let blobs = path_str(&blobs);
    let gen = path_str(&gen);
    let out = ctx.dir("determinism");
    let out_s = path_str(&out).to_string();
    let ckpt = out.join("train/model.ckpt");
    let ckpt_s = path_str(&ckpt).to_string();
    let steps: Vec<(&str, Vec<String>)> = vec![
        ("gen-data", vec!["gen-data".into(), "--config".into(), gen.into()]),
        ("train", vec!["train".into(), "--config".into(), blobs.into()]),
        (
            "eval",
            vec![
                "eval".into(),
                "--config".into(),
                blobs.into(),
                "--checkpoint".into(),
                ckpt_s.clone(),
            ],
        ),
        (
            "embed",
            vec![
                "embed".into(),
                "--config".into(),
                blobs.into(),
                "--checkpoint".into(),
                ckpt_s,
            ],
        ),
        (
            "compare",
            vec![
                "compare".into(),
                "--config".into(),
                ctx.config("margin_ablation.json").to_string_lossy().into(),
            ],
        ),
        (
            "gradcheck",
            vec![
                "gradcheck".into(),
                "--seed".into(),
                "3".into(),
                "--instances".into(),
                "20".into(),
            ],
        ),
    ];
    let mut checked = 0;
    for (name, args) in &steps {
        let target = format!("{out_s}/{name}");
        let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
        full.extend(["--out", target.as_str()]);
        let first = icu_ok(&full)?;
        let target = PathBuf::from(&target);
        let moved = out.join(format!("{name}.first"));
        if target.exists() {
            fs::rename(&target, &moved).map_err(|e| e.to_string())?;
        }
        let second = icu_ok(&full)?;
        if first.stdout != second.stdout {
            return Err(format!("`{name}` stdout differs between runs"));
        }
        if moved.exists() {
            let (a, b) = (snapshot(&moved)?, snapshot(&target)?);
            if a != b {
                return Err(format!("`{name}` output files differ between runs"));
            }
            checked += a.len();
            // Later steps read the checkpoint from the canonical location.
            fs::remove_dir_all(&moved).map_err(|e| e.to_string())?;
        }
    }
    Ok(format!(
        "{} commands, {checked} output files byte-identical",
        steps.len()
    ))
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .expect("workspace root");
    let ctx = Ctx {
        root,
        scratch: tempfile::tempdir().expect("scratch dir"),
    };
    let criteria = [
        Criterion {
            id: 1,
            name: "gradient correctness",
            limit: Some(Duration::from_secs(10)),
            check: gradient_correctness,
        },
        Criterion {
            id: 2,
            name: "bayes-rule equivalence",
            limit: Some(Duration::from_secs(5)),
            check: bayes_equivalence,
        },
        Criterion {
            id: 3,
            name: "narrow/wide two-class scenario",
            limit: Some(Duration::from_secs(120)),
            check: narrow_wide,
        },
        Criterion {
            id: 4,
            name: "margin identities",
            limit: Some(Duration::from_secs(5)),
            check: margin_identities,
        },
        Criterion {
            id: 5,
            name: "reduction identity",
            limit: Some(Duration::from_secs(1)),
            check: reduction_identity,
        },
        Criterion {
            id: 6,
            name: "MNIST ordering",
            limit: Some(Duration::from_secs(20 * 60)),
            check: mnist_balanced,
        },
        Criterion {
            id: 7,
            name: "long-tailed MNIST ordering",
            limit: Some(Duration::from_secs(15 * 60)),
            check: mnist_longtail,
        },
        Criterion {
            id: 8,
            name: "margin ablation grid",
            limit: None,
            check: margin_ablation,
        },
        Criterion {
            id: 9,
            name: "determinism",
            limit: None,
            check: determinism,
        },
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: Vec<&Criterion> = criteria
        .iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.id))
        .collect();
    let mut failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let mut result = (c.check)(&ctx);
        let elapsed = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&result, c.limit) {
            if elapsed > limit {
                result = Err(format!(
                    "{detail}; took {:.1}s, limit {}s",
                    elapsed.as_secs_f64(),
                    limit.as_secs()
                ));
            }
        }
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {} {}: {detail} [{:.1}s]", c.id, c.name, elapsed.as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    let strict = std::env::var("ICU_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failures > 0 && strict {
        std::process::exit(1);
    }
}
