//! Experiment configuration and execution: parse a JSON run configuration,
//! execute one or more methods over seeds, and write the results tree
//! `output_dir/<method>/seed_<s>/{results.csv, scores_*.csv, exemplars_*.csv,
//! model_*.json}` plus a top-level `summary.csv` with mean/std of the
//! final-session accuracy, AUROC and R_s per method across seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Deserialize;
use thiserror::Error;

use openinc_core::data::{generate_blobs, load_csv, plan_sessions, BlobSpec, DataError, Dataset};
use openinc_core::runner::{run, Method, RunConfig, RunnerError, SessionReport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("config parse: {0}")]
    Parse(String),
    #[error("config validation: {0}")]
    Validation(String),
    #[error("run {method} seed {seed} failed: {source}")]
    Run {
        method: String,
        seed: u64,
        #[source]
        source: RunnerError,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Dataset selection: seeded blobs (the default) or an external CSV.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        num_classes: Option<usize>,
        samples_per_class: Option<usize>,
        input_dim: Option<usize>,
        center_radius: Option<f64>,
        sigma: Option<f64>,
        /// Fixed dataset seed; when absent each run derives it from its own
        /// seed so different seeds see different draws.
        seed: Option<u64>,
    },
    Csv {
        path: PathBuf,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Blobs {
            num_classes: None,
            samples_per_class: None,
            input_dim: None,
            center_radius: None,
            sigma: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub classes_per_session: Option<usize>,
    pub num_outlier_classes: Option<usize>,
    /// Fixed shuffle seed; when absent each run derives it from its own seed.
    pub seed: Option<u64>,
}

/// Per-method entry: either a bare method name or a name plus overrides of
/// the run defaults.
#[derive(Debug, Clone)]
pub struct MethodEntry {
    pub method: Method,
    pub overrides: MethodOverrides,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MethodOverrides {
    pub epochs_base: Option<usize>,
    pub epochs_incremental: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub memory: Option<usize>,
    pub alpha: Option<f64>,
    pub lambda_dis: Option<f64>,
    pub tau: Option<f64>,
    pub kd_temperature: Option<f64>,
    pub k_nn: Option<usize>,
    pub tau_osr: Option<f64>,
    pub classifier_lr: Option<f64>,
    pub classifier_epochs: Option<usize>,
    pub hidden_dims: Option<Vec<usize>>,
    pub feature_dim: Option<usize>,
    pub proj_dim: Option<usize>,
}

impl<'de> Deserialize<'de> for MethodEntry {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        use serde::de::Error;
        let value = serde_json::Value::deserialize(deserializer)?;
        match value {
            serde_json::Value::String(name) => {
                let method = Method::from_str(&name).map_err(D::Error::custom)?;
                Ok(MethodEntry {
                    method,
                    overrides: MethodOverrides::default(),
                })
            }
            serde_json::Value::Object(mut map) => {
                let name = map
                    .remove("method")
                    .ok_or_else(|| D::Error::custom("method entry needs a \"method\" key"))?;
                let name: String = serde_json::from_value(name).map_err(D::Error::custom)?;
                let method = Method::from_str(&name).map_err(D::Error::custom)?;
                let overrides: MethodOverrides =
                    serde_json::from_value(serde_json::Value::Object(map))
                        .map_err(D::Error::custom)?;
                Ok(MethodEntry { method, overrides })
            }
            other => Err(D::Error::custom(format!(
                "method entry must be a string or object, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub sessions: SessionConfig,
    pub methods: Vec<MethodEntry>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// Parse and validate a config file, filling defaults.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    if !path.exists() {
        return Err(ExperimentError::FileNotFound(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| ExperimentError::Parse(e.to_string()))?;
    validate(&cfg)?;
    Ok(cfg)
}

fn check_range(name: &str, value: Option<f64>, lo: f64, hi: f64) -> Result<(), ExperimentError> {
    if let Some(v) = value {
        if !(lo..=hi).contains(&v) {
            return Err(ExperimentError::Validation(format!(
                "{name} = {v} outside [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

fn check_positive(name: &str, value: Option<f64>) -> Result<(), ExperimentError> {
    if let Some(v) = value {
        if v <= 0.0 {
            return Err(ExperimentError::Validation(format!(
                "{name} = {v} must be positive"
            )));
        }
    }
    Ok(())
}

pub fn validate(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    if cfg.methods.is_empty() {
        return Err(ExperimentError::Validation(
            "methods must not be empty".into(),
        ));
    }
    if cfg.seeds.is_empty() {
        return Err(ExperimentError::Validation(
            "seeds must not be empty".into(),
        ));
    }
    for entry in &cfg.methods {
        let o = &entry.overrides;
        check_range("alpha", o.alpha, 0.0, 1.0)?;
        check_range("tau_osr", o.tau_osr, 0.0, 1.0)?;
        check_positive("tau", o.tau)?;
        check_positive("kd_temperature", o.kd_temperature)?;
        check_positive("learning_rate", o.learning_rate)?;
        check_positive("classifier_lr", o.classifier_lr)?;
        if let Some(l) = o.lambda_dis {
            if l < 0.0 {
                return Err(ExperimentError::Validation(format!(
                    "lambda_dis = {l} must be nonnegative"
                )));
            }
        }
        if o.k_nn == Some(0) {
            return Err(ExperimentError::Validation(
                "k_nn must be at least 1".into(),
            ));
        }
        if let Some(b) = o.batch_size {
            if b < 2 {
                return Err(ExperimentError::Validation(
                    "batch_size must be at least 2".into(),
                ));
            }
        }
    }
    if let DatasetConfig::Blobs {
        sigma, num_classes, ..
    } = &cfg.dataset
    {
        check_positive("sigma", *sigma)?;
        if let Some(c) = num_classes {
            if *c < 2 {
                return Err(ExperimentError::Validation(
                    "num_classes must be at least 2".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Resolve the run configuration for one (method, seed) job.
fn resolve_run_config(entry: &MethodEntry, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        method: entry.method,
        seed,
        ..RunConfig::default()
    };
    let o = &entry.overrides;
    if let Some(v) = o.epochs_base {
        cfg.epochs_base = v;
    }
    if let Some(v) = o.epochs_incremental {
        cfg.epochs_incremental = v;
    }
    if let Some(v) = o.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.memory {
        cfg.memory = v;
    }
    if let Some(v) = o.alpha {
        cfg.loss.alpha = v;
    }
    if let Some(v) = o.lambda_dis {
        cfg.loss.lambda_dis = v;
    }
    if let Some(v) = o.tau {
        cfg.loss.tau = v;
    }
    if let Some(v) = o.kd_temperature {
        cfg.loss.kd_temperature = v;
    }
    if let Some(v) = o.k_nn {
        cfg.osr.k_nn = v;
    }
    if o.tau_osr.is_some() {
        cfg.osr.threshold = o.tau_osr;
    }
    if let Some(v) = o.classifier_lr {
        cfg.classifier_lr = v;
    }
    if let Some(v) = o.classifier_epochs {
        cfg.classifier_epochs = v;
    }
    if let Some(v) = &o.hidden_dims {
        cfg.hidden_dims = v.clone();
    }
    if let Some(v) = o.feature_dim {
        cfg.feature_dim = v;
    }
    if let Some(v) = o.proj_dim {
        cfg.proj_dim = v;
    }
    cfg
}

/// Build the dataset for one run seed.
fn resolve_dataset(dataset: &DatasetConfig, run_seed: u64) -> Result<Dataset, ExperimentError> {
    match dataset {
        DatasetConfig::Blobs {
            num_classes,
            samples_per_class,
            input_dim,
            center_radius,
            sigma,
            seed,
        } => {
            let defaults = BlobSpec::default();
            let spec = BlobSpec {
                num_classes: num_classes.unwrap_or(defaults.num_classes),
                samples_per_class: samples_per_class.unwrap_or(defaults.samples_per_class),
                input_dim: input_dim.unwrap_or(defaults.input_dim),
                center_radius: center_radius.unwrap_or(defaults.center_radius),
                sigma: sigma.unwrap_or(defaults.sigma),
                seed: seed.unwrap_or(run_seed),
            };
            Ok(generate_blobs(&spec)?)
        }
        DatasetConfig::Csv { path } => {
            let (ds, _map) = load_csv(path)?;
            Ok(ds)
        }
    }
}

#[derive(Debug)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub dir: PathBuf,
    pub reports: Vec<SessionReport>,
    pub dataset_fingerprint: u64,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunRecord>,
    pub summary_path: PathBuf,
}

fn execute_job(
    cfg: &ExperimentConfig,
    entry: &MethodEntry,
    seed: u64,
) -> Result<RunRecord, ExperimentError> {
    let dataset = resolve_dataset(&cfg.dataset, seed)?;
    let per_session = cfg
        .sessions
        .classes_per_session
        .unwrap_or_else(|| default_classes_per_session(&dataset));
    let outliers = cfg.sessions.num_outlier_classes.unwrap_or(2);
    let plan_seed = cfg.sessions.seed.unwrap_or_else(|| seed.wrapping_add(1));
    let plan = plan_sessions(dataset.num_classes, per_session, outliers, plan_seed)?;

    let run_cfg = resolve_run_config(entry, seed);
    let dir = cfg
        .output_dir
        .join(entry.method.name())
        .join(format!("seed_{seed}"));
    let out = run(&dataset, &plan, &run_cfg, Some(&dir)).map_err(|e| ExperimentError::Run {
        method: entry.method.name().to_string(),
        seed,
        source: e,
    })?;
    Ok(RunRecord {
        method: entry.method,
        seed,
        dir,
        reports: out.reports,
        dataset_fingerprint: dataset.fingerprint,
    })
}

fn default_classes_per_session(dataset: &Dataset) -> usize {
    // default protocol: pairs of classes per session
    if dataset.num_classes >= 4 {
        2
    } else {
        1
    }
}

/// Execute every (method, seed) pair; parallelism is capped by the
/// `OPENINC_THREADS` environment variable (default 1). Each run writes only
/// into its own directory, so jobs are independent.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    validate(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;

    let jobs: Vec<(usize, u64)> = cfg
        .methods
        .iter()
        .enumerate()
        .flat_map(|(mi, _)| cfg.seeds.iter().map(move |&s| (mi, s)))
        .collect();

    let threads = std::env::var("OPENINC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(1)
        .max(1)
        .min(jobs.len().max(1));

    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RunRecord, ExperimentError>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let (mi, seed) = jobs[i];
                let result = execute_job(cfg, &cfg.methods[mi], seed);
                *slots[i].lock().expect("result slot") = Some(result);
            });
        }
    });

    let mut runs = Vec::with_capacity(jobs.len());
    for slot in slots {
        runs.push(
            slot.into_inner()
                .expect("result slot")
                .expect("job executed")?,
        );
    }

    let summary_path = cfg.output_dir.join("summary.csv");
    write_summary(&summary_path, &cfg.methods, &runs)?;
    Ok(ExperimentOutcome { runs, summary_path })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `summary.csv`: per method, mean and (population) std across seeds of the
/// final-session accuracy, AUROC and R_s.
fn write_summary(
    path: &Path,
    methods: &[MethodEntry],
    runs: &[RunRecord],
) -> Result<(), ExperimentError> {
    let mut text = String::new();
    let mut fps: Vec<String> = runs
        .iter()
        .map(|r| format!("{:016x}", r.dataset_fingerprint))
        .collect();
    fps.dedup();
    let _ = writeln!(text, "# datasets {}", fps.join(" "));
    let _ = writeln!(
        text,
        "method,final_accuracy_mean,final_accuracy_std,final_auroc_mean,final_auroc_std,final_r_s_mean,final_r_s_std"
    );
    for entry in methods {
        let finals: Vec<&SessionReport> = runs
            .iter()
            .filter(|r| r.method == entry.method)
            .map(|r| r.reports.last().expect("run has sessions"))
            .collect();
        if finals.is_empty() {
            continue;
        }
        let acc: Vec<f64> = finals.iter().map(|r| r.accuracy).collect();
        let auroc: Vec<f64> = finals.iter().map(|r| r.auroc.unwrap_or(f64::NAN)).collect();
        let rs: Vec<f64> = finals.iter().map(|r| r.r_s).collect();
        let (am, asd) = mean_std(&acc);
        let (um, usd) = mean_std(&auroc);
        let (rm, rsd) = mean_std(&rs);
        let _ = writeln!(
            text,
            "{},{am},{asd},{um},{usd},{rm},{rsd}",
            entry.method.name()
        );
    }
    fs::write(path, text)?;
    Ok(())
}
