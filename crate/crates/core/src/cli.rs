//! Command-line entry point and the flat `key = value` run configuration.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, LevelFilter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{load_idx, normalize, synthetic_blobs, Dataset, Split};
use crate::error::{Error, Result};
use crate::hamiltonian::{aug_hp_value, layer_update, AugmentationWeight};
use crate::logging::{summarize, write_snapshot, read_snapshot, CsvSink};
use crate::metrics::{accuracy, confusion, sparsity_pct};
use crate::network::{
    build_model, forward_logits, init_params, terminal_loss, Batch, LayerParams, Model, ParamSet, LENET5,
};
use crate::regularization::{RegKind, Regularizer};
use crate::trainer::{objective_and_gradient, train_with, Strategy, TrainConfig};

const KEYS: &[&str] = &[
    "seed",
    "arch",
    "data",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "train_subset",
    "normalize",
    "blob_per_class",
    "blob_test_per_class",
    "blob_classes",
    "blob_dim",
    "blob_separation",
    "M",
    "k_max",
    "eps0",
    "mu",
    "eta",
    "strategy",
    "zeta",
    "omega",
    "rho",
    "alpha",
    "reg_kind",
    "include_bias",
    "eval_every",
    "out_dir",
    "j_max",
    "eps_min",
    "class_weighting",
    "diagnostics",
    "gradcheck_samples",
    "flush_every",
];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test: Option<(PathBuf, PathBuf)>,
    },
    Blobs {
        per_class: usize,
        test_per_class: usize,
        classes: usize,
        dim: usize,
        separation: f64,
    },
}

/// Everything a config file determines.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Architecture text (already resolved from a built-in name or a file).
    pub arch: String,
    pub data: DataSource,
    pub train_subset: Option<usize>,
    pub normalize: bool,
    pub out_dir: PathBuf,
    pub gradcheck_samples: usize,
    pub flush_every: usize,
}

/// Model and data ready for training.
pub struct Prepared {
    pub config: RunConfig,
    pub model: Model,
    pub train: Dataset,
    pub test: Option<Dataset>,
}

fn value_err(key: &str, message: impl Into<String>) -> Error {
    Error::ConfigValue {
        key: key.into(),
        message: message.into(),
    }
}

struct Entries {
    map: HashMap<String, String>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| value_err(key, format!("cannot parse `{v}`"))),
        }
    }

    fn or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(value_err(key, format!("expected true or false, got `{v}`"))),
        }
    }
}

fn parse_entries(text: &str) -> Result<Entries> {
    let mut map = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::ConfigSyntax {
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::UnknownKey(k.into()));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::ConfigSyntax {
                line: i + 1,
                message: format!("duplicate key `{k}`"),
            });
        }
    }
    Ok(Entries { map })
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn resolve_arch(value: Option<&str>, base: &Path) -> Result<String> {
    match value {
        None | Some("lenet5") => Ok(LENET5.to_string()),
        Some(v) if v.contains("out=") => Ok(v.replace(';', "\n")),
        Some(v) => {
            let path = resolve(base, v);
            fs::read_to_string(&path).map_err(|e| Error::io(path, e))
        }
    }
}

/// Parse config text; relative paths are taken relative to `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig> {
    let e = parse_entries(text)?;
    let strategy = match e.raw("strategy").unwrap_or("sqh") {
        "sqh" => Strategy::Sqh,
        "ma" => Strategy::MovingAverage,
        other => return Err(value_err("strategy", format!("expected sqh or ma, got `{other}`"))),
    };
    // the moving-average strategy defaults to the mini-batch profile
    let profile = match strategy {
        Strategy::Sqh => TrainConfig::default(),
        Strategy::MovingAverage => TrainConfig::minibatch_profile(1),
    };
    let reg_kind = match e.raw("reg_kind").unwrap_or("none") {
        "l2l0" => RegKind::L2L0,
        "elastic_net" => RegKind::ElasticNet,
        "none" => RegKind::None,
        other => return Err(value_err("reg_kind", format!("expected l2l0, elastic_net or none, got `{other}`"))),
    };
    let alpha = e.or("alpha", 0.8)?;
    let rho = e.or("rho", if reg_kind == RegKind::None { 0.0 } else { 1e-4 })?;
    let reg = Regularizer::new(reg_kind, alpha, rho, e.flag("include_bias", true)?).map_err(|err| {
        let key = if (0.0..1.0).contains(&alpha) { "rho" } else { "alpha" };
        value_err(key, err.to_string())
    })?;
    let batch_size = match e.raw("M") {
        None | Some("full") => None,
        Some(v) => Some(v.parse::<usize>().map_err(|_| value_err("M", format!("expected an integer or `full`, got `{v}`")))?),
    };
    let train = TrainConfig {
        seed: e.or("seed", 0)?,
        batch_size,
        k_max: e.or("k_max", 100)?,
        eps0: e.or("eps0", profile.eps0)?,
        mu: e.or("mu", profile.mu)?,
        eta: e.or("eta", profile.eta)?,
        strategy,
        zeta: e.or("zeta", profile.zeta)?,
        omega: e.or("omega", profile.omega)?,
        reg,
        eval_every: e.or("eval_every", 0)?,
        j_max: e.or("j_max", profile.j_max)?,
        eps_min: e.or("eps_min", profile.eps_min)?,
        class_weighting: e.flag("class_weighting", false)?,
        diagnostics: e.flag("diagnostics", false)?,
    };
    // dataset-independent checks now, the M range once data is loaded
    train.validate(usize::MAX)?;

    let data = match e.raw("data").unwrap_or("idx") {
        "idx" => {
            let need = |k: &str| e.raw(k).map(|v| resolve(base, v)).ok_or_else(|| value_err(k, "required for idx data"));
            let test = match (e.raw("test_images"), e.raw("test_labels")) {
                (Some(i), Some(l)) => Some((resolve(base, i), resolve(base, l))),
                (None, None) => None,
                _ => return Err(value_err("test_images", "test_images and test_labels go together")),
            };
            DataSource::Idx {
                train_images: need("train_images")?,
                train_labels: need("train_labels")?,
                test,
            }
        }
        "blobs" => DataSource::Blobs {
            per_class: e.or("blob_per_class", 50)?,
            test_per_class: e.or("blob_test_per_class", 50)?,
            classes: e.or("blob_classes", 2)?,
            dim: e.or("blob_dim", 2)?,
            separation: e.or("blob_separation", 4.0)?,
        },
        other => return Err(value_err("data", format!("expected idx or blobs, got `{other}`"))),
    };
    let gradcheck_samples = e.or("gradcheck_samples", 8)?;
    if gradcheck_samples == 0 {
        return Err(value_err("gradcheck_samples", "must be >= 1"));
    }
    Ok(RunConfig {
        train,
        arch: resolve_arch(e.raw("arch"), base)?,
        data,
        train_subset: e.parse("train_subset")?,
        normalize: e.flag("normalize", true)?,
        out_dir: resolve(base, e.raw("out_dir").unwrap_or("runs/latest")),
        gradcheck_samples,
        flush_every: e.or("flush_every", 10)?,
    })
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new(".")))
}

impl RunConfig {
    /// Load data, apply subset and normalization, and build the model.
    pub fn prepare(self) -> Result<Prepared> {
        let seed = self.train.seed;
        let (mut train, mut test) = match &self.data {
            DataSource::Idx {
                train_images,
                train_labels,
                test,
            } => {
                let tr = load_idx(train_images, train_labels)?;
                let te = match test {
                    Some((i, l)) => Some(load_idx(i, l)?.with_split(Split::Test)),
                    None => None,
                };
                (tr, te)
            }
            DataSource::Blobs {
                per_class,
                test_per_class,
                classes,
                dim,
                separation,
            } => {
                let tr = synthetic_blobs(seed, *per_class, *classes, *dim, *separation)?;
                let te = synthetic_blobs(seed ^ 0x9e37_79b9_7f4a_7c15, *test_per_class, *classes, *dim, *separation)?;
                (tr, Some(te.with_split(Split::Test)))
            }
        };
        if let Some(n) = self.train_subset {
            train = train.random_subset(seed, n)?;
        }
        if let Some(t) = test.take() {
            let classes = train.classes().max(t.classes());
            train = train.with_classes(classes)?;
            test = Some(t.with_classes(classes)?);
        }
        if self.normalize && matches!(self.data, DataSource::Idx { .. }) {
            let (mean, std) = train.pixel_stats();
            train = normalize(&train, mean, std)?;
            test = test.map(|t| normalize(&t, mean, std)).transpose()?;
        }
        self.train.validate(train.len())?;
        let model = build_model(&self.arch, train.image_shape())?;
        Ok(Prepared {
            config: self,
            model,
            train,
            test,
        })
    }
}

// ---------------------------------------------------------------------------
// checks
// ---------------------------------------------------------------------------

/// Mean unregularized loss of `batch`.
fn mean_loss(model: &Model, params: &ParamSet, batch: &Batch) -> Result<f64> {
    let logits = forward_logits(model, params, batch.inputs())?;
    Ok(terminal_loss(&logits, batch.targets(), batch.classes(), batch.class_weights())?.0)
}

/// Read entry `i` of layer `l` (weights first, then bias), optionally
/// overwriting it; returns the previous value.
fn entry(p: &mut ParamSet, l: usize, n_w: usize, i: usize, set: Option<f64>) -> f64 {
    let layer = &mut p.layers_mut()[l];
    let slot = if i < n_w { &mut layer.weight[i] } else { &mut layer.bias[i - n_w] };
    let old = *slot;
    if let Some(v) = set {
        *slot = v;
    }
    old
}

/// Per-layer norm-wise relative error between the Hamiltonian gradient and
/// the negative central-difference gradient of the mean loss.
pub fn gradient_check(model: &Model, params: &ParamSet, batch: &Batch, step: f64) -> Result<Vec<f64>> {
    let (_, grad) = objective_and_gradient(model, params, batch, &Regularizer::none())?;
    let mut probe = params.clone();
    let mut errors = Vec::with_capacity(model.depth());
    for (l, f) in grad.layers().iter().enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        let n_w = f.weight.len();
        for i in 0..f.len() {
            let orig = entry(&mut probe, l, n_w, i, None);
            entry(&mut probe, l, n_w, i, Some(orig + step));
            let plus = mean_loss(model, &probe, batch)?;
            entry(&mut probe, l, n_w, i, Some(orig - step));
            let minus = mean_loss(model, &probe, batch)?;
            entry(&mut probe, l, n_w, i, Some(orig));
            let fd = -(plus - minus) / (2.0 * step);
            let analytic = if i < n_w { f.weight[i] } else { f.bias[i - n_w] };
            num += (analytic - fd).powi(2);
            den += fd * fd;
        }
        errors.push(if den == 0.0 { num.sqrt() } else { (num / den).sqrt() });
    }
    Ok(errors)
}

/// Largest shortfall of the closed-form update against a dense 1-D search
/// over `n` random coordinate problems.
pub fn prox_check(n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let kind = if i % 2 == 0 { RegKind::L2L0 } else { RegKind::ElasticNet };
        let reg = Regularizer::new(kind, rng.random_range(0.0..0.99), rng.random_range(0.0..2.0), true)?;
        let f = LayerParams {
            weight: vec![rng.random_range(-3.0..3.0)],
            bias: vec![],
        };
        let u = LayerParams {
            weight: vec![rng.random_range(-3.0..3.0)],
            bias: vec![],
        };
        let eps = AugmentationWeight::new(rng.random_range(0.05..5.0))?;
        let w = layer_update(&f, &u, &reg, eps);
        let ours = aug_hp_value(&f, &w, &u, &reg, eps);
        // the maximizer lies within |F|/ε of u (and 0 is always a candidate)
        let radius = f.weight[0].abs() / eps.get() + 1.0;
        let center = u.weight[0];
        let grid = 4000;
        let mut best = aug_hp_value(&f, &LayerParams { weight: vec![0.0], bias: vec![] }, &u, &reg, eps);
        for g in 0..=grid {
            let x = center - radius + 2.0 * radius * g as f64 / grid as f64;
            let cand = LayerParams { weight: vec![x], bias: vec![] };
            best = best.max(aug_hp_value(&f, &cand, &u, &reg, eps));
        }
        worst = worst.max(best - ours);
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

#[derive(Parser, Debug)]
#[command(name = "pmptrain", about = "Train small networks with Hamiltonian-based updates", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from a config file; writes train.csv, params.bin and summary.json.
    Train { config: PathBuf },
    /// Compare the Hamiltonian gradient against finite differences.
    Gradcheck { config: PathBuf },
    /// Check the closed-form update against a brute-force search.
    Proxcheck {
        #[arg(default_value_t = 1000)]
        n: usize,
    },
    /// Accuracy, sparsity and confusion matrix of a parameter snapshot.
    Eval { config: PathBuf, params: PathBuf },
}

fn init_logging() {
    let level = match std::env::var("PMPTRAIN_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("debug") => LevelFilter::Debug,
        _ => LevelFilter::Info,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

fn run_train(config: &Path) -> Result<i32> {
    let p = parse_config(config)?.prepare()?;
    let out = &p.config.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    info!(
        "{} training samples, {} parameters, {} iterations",
        p.train.len(),
        p.model.param_count(),
        p.config.train.k_max
    );
    let mut sink = CsvSink::create(out.join("train.csv"), p.config.flush_every)?;
    let init = init_params(&p.model, p.config.train.seed);
    let (params, log) = train_with(
        p.config.train.clone(),
        &p.model,
        &p.train,
        p.test.as_ref(),
        init,
        |r| sink.append_row(r),
    )?;
    sink.finish()?;
    write_snapshot(out.join("params.bin"), &p.model, &params)?;
    let summary = summarize(&log)?;
    let path = out.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| Error::io(&path, e))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}

fn run_gradcheck(config: &Path) -> Result<i32> {
    let p = parse_config(config)?.prepare()?;
    let n = p.config.gradcheck_samples.min(p.train.len());
    let idx: Vec<usize> = (0..n).collect();
    let batch = p.train.batch(&idx, &vec![1.0; p.train.classes()])?;
    let params = init_params(&p.model, p.config.train.seed);
    let errors = gradient_check(&p.model, &params, &batch, 1e-5)?;
    for (l, e) in errors.iter().enumerate() {
        println!("layer {l}: relative error {e:.3e}");
    }
    let max = errors.iter().cloned().fold(0.0, f64::max);
    println!("max relative error {max:.3e}");
    Ok(if max <= 1e-6 { 0 } else { 1 })
}

fn run_proxcheck(n: usize) -> Result<i32> {
    let gap = prox_check(n, 0)?;
    println!("{n} instances, max objective gap {gap:.3e}");
    Ok(if gap <= 1e-10 { 0 } else { 1 })
}

fn run_eval(config: &Path, snapshot: &Path) -> Result<i32> {
    let p = parse_config(config)?.prepare()?;
    let params = read_snapshot(snapshot, &p.model)?;
    let data = p.test.as_ref().unwrap_or(&p.train);
    println!("accuracy {:.2}%", accuracy(&p.model, &params, data)?);
    println!("sparsity {:.2}%", sparsity_pct(&params, p.config.train.reg.include_bias));
    let cm = confusion(&p.model, &params, data)?;
    println!("confusion (rows = true class):");
    for row in cm.rows() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:6}")).collect();
        println!("{}", cells.join(""));
    }
    Ok(0)
}

/// Parse `args` (program name first) and run the chosen subcommand.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging();
    let result = match &cli.command {
        Command::Train { config } => run_train(config),
        Command::Gradcheck { config } => run_gradcheck(config),
        Command::Proxcheck { n } => run_proxcheck(*n),
        Command::Eval { config, params } => run_eval(config, params),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
