//! Experiment configuration files.
//!
//! Layering, lowest to highest: built-in defaults, `--preset`, the TOML
//! file, command-line flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use spikebudget::budget::BudgetConfig;
use spikebudget::continual::{ConfigId, InsertTiming, Preset, RunConfig, TaskSchedule};

pub const DATA_ENV: &str = "SPIKEBUDGET_DATA";
pub const DEFAULT_DATA: &str = "data/mnist-subset";
pub const DEFAULT_SEEDS: [u64; 3] = [42, 43, 44];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: Box<toml::de::Error> },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Mnist,
}

/// Keys accepted at the top level of a config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<DatasetName>,
    pub data_dir: Option<PathBuf>,
    pub preset: Option<String>,
    pub schedule: Option<String>,
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub configs: Option<Vec<String>>,
    #[serde(default)]
    pub run: RunOverrides,
}

/// `[run]` table: training hyperparameters.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOverrides {
    pub epochs_per_task: Option<usize>,
    pub batch_size: Option<usize>,
    pub timesteps: Option<usize>,
    pub learning_rate: Option<f64>,
    pub hidden: Option<usize>,
    pub beta_init: Option<f64>,
    pub vthr_init: Option<f64>,
    pub surrogate_slope: Option<f64>,
    pub max_grad_norm: Option<f64>,
    pub buffer_capacity: Option<usize>,
    pub replay_batch: Option<usize>,
    pub reencode: Option<bool>,
    pub insert_timing: Option<InsertTiming>,
    #[serde(default)]
    pub budget: BudgetOverrides,
}

/// `[run.budget]` table.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetOverrides {
    pub r_target: Option<f64>,
    pub eta: Option<f64>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub window: Option<usize>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($field:ident),+) => {
        $(if let Some(v) = $src.$field { $dst.$field = v; })+
    };
}

impl RunOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        overlay!(
            cfg,
            self,
            epochs_per_task,
            batch_size,
            timesteps,
            learning_rate,
            hidden,
            beta_init,
            vthr_init,
            surrogate_slope,
            max_grad_norm,
            buffer_capacity,
            reencode,
            insert_timing
        );
        if self.replay_batch.is_some() {
            cfg.replay_batch = self.replay_batch;
        }
        let b: &mut BudgetConfig = &mut cfg.budget;
        overlay!(b, self.budget, r_target, eta, lambda_min, lambda_max, window);
    }
}

/// Values given on the command line; each beats the file.
#[derive(Debug, Default, Clone)]
pub struct CliOverrides {
    pub preset: Option<Preset>,
    pub seeds: Vec<u64>,
    pub configs: Vec<ConfigId>,
    pub out: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub schedule: Option<String>,
    pub epochs_per_task: Option<usize>,
}

/// Fully resolved experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetName,
    pub data_dir: PathBuf,
    pub preset: Option<Preset>,
    pub schedule: TaskSchedule,
    /// Per-class (train, test) cap, `None` for every sample on disk.
    pub subset: Option<(usize, usize)>,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub configs: Vec<ConfigId>,
    /// Template; `config` and `seed` are set per run.
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn run_config(&self, id: ConfigId, seed: u64) -> RunConfig {
        RunConfig { config: id, seed, ..self.run.clone() }
    }
}

pub fn parse_file(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
    parse_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source: Box::new(source) })
}

pub fn parse_str(text: &str) -> Result<FileConfig, toml::de::Error> {
    toml::from_str(text)
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

pub fn resolve(file: Option<FileConfig>, cli: CliOverrides) -> Result<ExperimentConfig, ConfigError> {
    let file = file.unwrap_or_default();
    let preset = match (cli.preset, &file.preset) {
        (Some(p), _) => Some(p),
        (None, Some(name)) => Some(name.parse().map_err(|e| invalid(format!("preset: {e}")))?),
        (None, None) => None,
    };

    let mut run = RunConfig::new(ConfigId::C0, 0);
    let mut subset = None;
    let mut schedule = TaskSchedule::uniform(5, 2).expect("5x2 is valid");
    if let Some(p) = preset {
        p.apply(&mut run);
        subset = p.subset();
        schedule = p.schedule();
    }

    file.run.apply(&mut run);
    if let Some(e) = cli.epochs_per_task {
        run.epochs_per_task = e;
    }
    run.validate().map_err(|e| invalid(format!("run: {e}")))?;

    if let Some(text) = cli.schedule.as_ref().or(file.schedule.as_ref()) {
        schedule = text.parse().map_err(|e| invalid(format!("schedule: {e}")))?;
    }
    match (file.train_per_class, file.test_per_class) {
        (None, None) => {}
        (Some(train), Some(test)) => subset = Some((train, test)),
        (train, test) => {
            let base = subset.ok_or_else(|| invalid("train_per_class and test_per_class must be set together"))?;
            subset = Some((train.unwrap_or(base.0), test.unwrap_or(base.1)));
        }
    }

    let data_dir = cli
        .data_dir
        .or(file.data_dir)
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA));

    let seeds = if !cli.seeds.is_empty() { cli.seeds } else { file.seeds.unwrap_or_else(|| DEFAULT_SEEDS.to_vec()) };
    if seeds.is_empty() {
        return Err(invalid("seeds: at least one seed is required"));
    }

    let configs = if !cli.configs.is_empty() {
        cli.configs
    } else if let Some(names) = file.configs {
        names.iter().map(|n| n.parse().map_err(|e| invalid(format!("configs: {e}")))).collect::<Result<Vec<_>, _>>()?
    } else {
        ConfigId::ALL.to_vec()
    };
    if configs.is_empty() {
        return Err(invalid("configs: at least one configuration is required"));
    }

    Ok(ExperimentConfig {
        dataset: file.dataset.unwrap_or(DatasetName::Mnist),
        data_dir,
        preset,
        schedule,
        subset,
        out: cli.out.or(file.out).unwrap_or_else(|| PathBuf::from("runs")),
        seeds,
        configs,
        run,
    })
}
