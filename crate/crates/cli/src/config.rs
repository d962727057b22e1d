//! Run configuration: built-in defaults, then an optional TOML file, then
//! command-line flags. Everything is resolved before a pipeline stage runs.

use std::path::{Path, PathBuf};

use clap::Args;
use refcast::data::SplitMode;
use refcast::graph::RwrParams;
use refcast::par::Exec;
use refcast::trainer::{ExperimentConfig, LossScope, Task, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub task: TaskSection,
    pub retrieval: RetrievalSection,
    pub model: ModelSection,
    pub train: TrainSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset directory holding `series.csv`, `graph.csv` and `meta.json`.
    pub dir: PathBuf,
    /// Where checkpoints and reports are written.
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub kind: Task,
    pub setting: SplitMode,
    pub window: usize,
    pub rates: Vec<f64>,
    /// Defaults to the top-level seed.
    pub split_seed: Option<u64>,
    pub denormalize: bool,
    /// Imputation mask sets per test window.
    pub eval_draws: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub k: Vec<usize>,
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d: usize,
    pub blocks: usize,
    pub heads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: Vec<f64>,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub loss: LossScope,
    pub exec: Exec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let desk = ExperimentConfig::desk(Task::Forecast, 0);
        Self {
            seed: 0,
            data: DataSection::default(),
            task: TaskSection {
                kind: desk.task,
                setting: desk.setting,
                window: desk.window,
                rates: desk.rates.clone(),
                split_seed: None,
                denormalize: desk.denormalize,
                eval_draws: desk.eval_draws,
            },
            retrieval: RetrievalSection {
                k: desk.ks.clone(),
                c: desk.rwr.c,
                tol: desk.rwr.tol,
                max_iter: desk.rwr.max_iter,
            },
            model: ModelSection { d: desk.d, blocks: desk.blocks, heads: desk.heads },
            train: TrainSection {
                lr: desk.lrs.clone(),
                batch_size: desk.train.batch_size,
                patience: desk.train.patience,
                max_epochs: desk.train.max_epochs,
                loss: desk.train.loss,
                exec: desk.train.exec,
            },
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("data"), out: PathBuf::from("out") }
    }
}

macro_rules! section_default {
    ($($ty:ident => $field:ident),*) => {$(
        impl Default for $ty {
            fn default() -> Self {
                RunConfig::default().$field
            }
        }
    )*};
}
section_default!(TaskSection => task, RetrievalSection => retrieval, ModelSection => model, TrainSection => train);

/// Flags shared by `train`, `eval` and `infer`; each overrides its config key.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigFlags {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long, value_enum)]
    pub setting: Option<SettingArg>,
    /// Snippet length T.
    #[arg(long)]
    pub window: Option<usize>,
    /// Missing rates, comma separated.
    #[arg(long = "r", value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Report metrics in original units.
    #[arg(long)]
    pub denormalize: bool,
    /// Imputation mask sets per test window.
    #[arg(long)]
    pub eval_draws: Option<usize>,
    /// Reference counts, comma separated.
    #[arg(long = "k", value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// RWR damping factor.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Learning rates, comma separated.
    #[arg(long = "lr", value_delimiter = ',')]
    pub lrs: Option<Vec<f64>>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Run on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum TaskArg {
    Forecast,
    Impute,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Forecast => Task::Forecast,
            TaskArg::Impute => Task::Impute,
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum SettingArg {
    Single,
    SpatialTemporal,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum LossArg {
    Full,
    MaskedOnly,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    /// File (if any) over defaults, then flags over both.
    pub fn resolve(flags: &ConfigFlags) -> Result<Self, CliError> {
        let mut cfg = match &flags.config {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        cfg.apply(flags);
        cfg.experiment()?;
        Ok(cfg)
    }

    fn apply(&mut self, f: &ConfigFlags) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        set(&mut self.data.dir, &f.data);
        set(&mut self.data.out, &f.out);
        set(&mut self.seed, &f.seed);
        if let Some(t) = f.task {
            self.task.kind = t.into();
        }
        if let Some(s) = f.setting {
            self.task.setting = match s {
                SettingArg::Single => SplitMode::Single,
                SettingArg::SpatialTemporal => SplitMode::SpatialTemporal,
            };
        }
        set(&mut self.task.window, &f.window);
        set(&mut self.task.rates, &f.rates);
        if f.split_seed.is_some() {
            self.task.split_seed = f.split_seed;
        }
        self.task.denormalize |= f.denormalize;
        set(&mut self.task.eval_draws, &f.eval_draws);
        set(&mut self.retrieval.k, &f.ks);
        set(&mut self.retrieval.c, &f.c);
        set(&mut self.model.d, &f.d);
        set(&mut self.model.blocks, &f.blocks);
        set(&mut self.model.heads, &f.heads);
        set(&mut self.train.lr, &f.lrs);
        set(&mut self.train.batch_size, &f.batch_size);
        set(&mut self.train.patience, &f.patience);
        set(&mut self.train.max_epochs, &f.epochs);
        if let Some(l) = f.loss {
            self.train.loss = match l {
                LossArg::Full => LossScope::Full,
                LossArg::MaskedOnly => LossScope::MaskedOnly,
            };
        }
        if f.sequential {
            self.train.exec = Exec::Sequential;
        }
    }

    /// The core experiment description, validated.
    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let mut train = TrainConfig::new(self.task.kind, self.task.rates.clone(), self.seed);
        train.lr = self.train.lr.first().copied().unwrap_or(train.lr);
        train.batch_size = self.train.batch_size;
        train.patience = self.train.patience;
        train.max_epochs = self.train.max_epochs;
        train.loss = self.train.loss;
        train.exec = self.train.exec;
        train.validate().map_err(CliError::from)?;
        let cfg = ExperimentConfig {
            setting: self.task.setting,
            task: self.task.kind,
            window: self.task.window,
            d: self.model.d,
            blocks: self.model.blocks,
            heads: self.model.heads,
            ks: self.retrieval.k.clone(),
            lrs: self.train.lr.clone(),
            rates: self.task.rates.clone(),
            split_seed: self.task.split_seed.unwrap_or(self.seed),
            seed: self.seed,
            train,
            rwr: RwrParams { c: self.retrieval.c, tol: self.retrieval.tol, max_iter: self.retrieval.max_iter },
            denormalize: self.task.denormalize,
            eval_draws: self.task.eval_draws,
        };
        if cfg.eval_draws == 0 {
            return Err(CliError::usage("eval_draws must be at least 1"));
        }
        if cfg.ks.is_empty() || cfg.lrs.is_empty() {
            return Err(CliError::usage("k and lr lists must be non-empty"));
        }
        for &k in &cfg.ks {
            cfg.model_config(k, 1).validate().map_err(CliError::from)?;
        }
        if !(cfg.rwr.c > 0.0 && cfg.rwr.c < 1.0) {
            return Err(CliError::usage(format!("damping c = {} must lie in (0, 1)", cfg.rwr.c)));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 4\n[model]\nd = 32\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.model.d, 32);
        assert_eq!(cfg.model.heads, RunConfig::default().model.heads);
        assert_eq!(cfg.train, RunConfig::default().train);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 4\n").is_err());
        assert!(toml::from_str::<RunConfig>("[model]\ndepth = 2\n").is_err());
    }

    #[test]
    fn flags_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 4\n[retrieval]\nk = [3]\nc = 0.8\n").unwrap();
        let flags = ConfigFlags { config: Some(path), ks: Some(vec![2]), ..Default::default() };
        let cfg = RunConfig::resolve(&flags).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.retrieval.k, vec![2]);
        assert_eq!(cfg.retrieval.c, 0.8);
        assert_eq!(cfg.experiment().unwrap().split_seed, 4);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        for flags in [
            ConfigFlags { rates: Some(vec![1.2]), ..Default::default() },
            ConfigFlags { c: Some(1.0), ..Default::default() },
            ConfigFlags { heads: Some(3), ..Default::default() },
        ] {
            assert_eq!(RunConfig::resolve(&flags).unwrap_err().code, crate::error::EXIT_USAGE);
        }
    }
}
