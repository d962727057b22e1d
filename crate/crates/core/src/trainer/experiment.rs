//! End-to-end runs: split, retrieve, train a grid of models, evaluate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{fit_norm_stats, split, NormStats, Partition, SplitMode, SplitSpec, TimeSeriesDB};
use crate::graph::{RwrParams, SpanPolicy};
use crate::par::Exec;
use crate::synthesis::{SynthesisConfig, SynthesisModel};

use super::baselines::{RefPredictor, RetrievalOnlyPredictor};
use super::eval::{evaluate, EvalReport, EvalSpec, ModelPredictor, Predictor};
use super::samples::{build_samples, split_targets, RetrievalSpec, SampleSet, SplitPart};
use super::synthetic::{synth_data_gen, SynthSpec};
use super::train::{train, TrainConfig, TrainOutcome};
use super::{mix_seed, Task, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setting: SplitMode,
    pub task: Task,
    /// Snippet length `T`.
    pub window: usize,
    pub d: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ks: Vec<usize>,
    pub lrs: Vec<f64>,
    /// Missing rates used for training masks and reported individually.
    pub rates: Vec<f64>,
    pub split_seed: u64,
    /// Seeds model init, training masks and evaluation masks.
    pub seed: u64,
    pub train: TrainConfig,
    pub rwr: RwrParams,
    /// Report metrics in original units.
    pub denormalize: bool,
    /// Imputation mask sets per test window, pooled to steady the scores.
    #[serde(default = "one")]
    pub eval_draws: usize,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn policy(&self, db: &TimeSeriesDB) -> Result<SpanPolicy, TrainError> {
        Ok(match self.task {
            Task::Forecast => SpanPolicy::forecasting_periodic(db.period())?,
            Task::Impute => SpanPolicy::imputation(),
        })
    }

    pub fn model_config(&self, k: usize, v: usize) -> SynthesisConfig {
        SynthesisConfig::new(self.d, self.blocks, self.heads, k, self.window, v)
    }

    fn train_config(&self, lr: f64) -> TrainConfig {
        TrainConfig { lr, task: self.task, rates: self.rates.clone(), seed: self.seed, ..self.train.clone() }
    }

    fn eval_spec(&self, stats: &NormStats, seed_tag: u64) -> EvalSpec {
        EvalSpec {
            task: self.task,
            setting: self.setting,
            rates: self.rates.clone(),
            seed: mix_seed(&[self.seed, seed_tag]),
            draws: self.eval_draws,
            denormalize: self.denormalize.then(|| stats.clone()),
            exec: self.train.exec,
        }
    }
}

/// Data prepared once and shared by every grid cell.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub partition: Partition,
    pub stats: NormStats,
    pub train: SampleSet,
    pub val: SampleSet,
    pub test: SampleSet,
}

const VAL_TAG: u64 = 1;
const TEST_TAG: u64 = 2;

impl Experiment {
    pub fn prepare(db: &TimeSeriesDB, cfg: &ExperimentConfig) -> Result<Self, TrainError> {
        let spec = SplitSpec::new(cfg.setting, cfg.split_seed);
        let partition = split(db, &spec, cfg.window)?;
        let stats = fit_norm_stats(db, &partition)?;
        let policy = cfg.policy(db)?;
        let retrieval = RetrievalSpec { k_max: cfg.ks.iter().copied().max().unwrap_or(0), policy, rwr: cfg.rwr };
        let build = |part| {
            let targets = split_targets(db, &partition, part, cfg.window, &policy);
            let set = build_samples(db, &stats, &partition, &targets, cfg.window, &retrieval, cfg.train.exec)?;
            if set.is_empty() {
                return Err(TrainError::InvalidConfig(format!("no eligible {part:?} windows")));
            }
            Ok(set)
        };
        Ok(Self { train: build(SplitPart::Train)?, val: build(SplitPart::Val)?, test: build(SplitPart::Test)?, partition, stats })
    }

    /// Trains one `(k, lr)` cell.
    pub fn fit(&self, cfg: &ExperimentConfig, k: usize, lr: f64) -> Result<(SynthesisModel, TrainOutcome), TrainError> {
        let mut model = SynthesisModel::new(cfg.model_config(k, self.train.v), mix_seed(&[cfg.seed, k as u64]))?;
        let outcome = train(&mut model, &self.train, Some(&self.val), &cfg.train_config(lr))?;
        Ok((model, outcome))
    }

    pub fn evaluate_test(&self, cfg: &ExperimentConfig, p: &dyn Predictor) -> Result<EvalReport, TrainError> {
        evaluate(p, &self.test, &cfg.eval_spec(&self.stats, TEST_TAG))
    }

    pub fn evaluate_val(&self, cfg: &ExperimentConfig, p: &dyn Predictor) -> Result<EvalReport, TrainError> {
        evaluate(p, &self.val, &cfg.eval_spec(&self.stats, VAL_TAG))
    }
}

/// One line of `sweep.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: SplitMode,
    pub task: Task,
    pub r: f64,
    pub k: usize,
    pub lr: f64,
    pub seed: u64,
    pub rmse: f64,
    pub mae: f64,
    pub sigma: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellResult {
    pub k: usize,
    pub lr: f64,
    pub val_rmse: f64,
    pub outcome: TrainOutcome,
    pub test: EvalReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    /// Index into `cells` of the lowest validation RMSE.
    pub best: usize,
    pub baselines: Vec<(String, EvalReport)>,
    pub rows: Vec<SweepRow>,
}

/// Trains and evaluates every `(k, lr)` cell, plus the REF and
/// retrieval-only baselines at the largest `k`.
pub fn run_sweep(db: &TimeSeriesDB, cfg: &ExperimentConfig) -> Result<SweepResult, TrainError> {
    if cfg.ks.is_empty() || cfg.lrs.is_empty() {
        return Err(TrainError::InvalidConfig("empty k or lr grid".into()));
    }
    let exp = Experiment::prepare(db, cfg)?;
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    for &k in &cfg.ks {
        for &lr in &cfg.lrs {
            let (model, outcome) = exp.fit(cfg, k, lr)?;
            let val_rmse = exp.evaluate_val(cfg, &ModelPredictor(&model))?.rmse;
            let test = exp.evaluate_test(cfg, &ModelPredictor(&model))?;
            for m in &test.per_rate {
                rows.push(SweepRow {
                    setting: cfg.setting,
                    task: cfg.task,
                    r: m.r,
                    k,
                    lr,
                    seed: cfg.seed,
                    rmse: m.rmse,
                    mae: m.mae,
                    sigma: m.theory.sigma_hat,
                    delta: m.theory.delta,
                });
            }
            cells.push(CellResult { k, lr, val_rmse, outcome, test });
        }
    }
    let best = (0..cells.len()).min_by(|&a, &b| cells[a].val_rmse.total_cmp(&cells[b].val_rmse)).expect("non-empty grid");
    let k_max = cfg.ks.iter().copied().max().unwrap_or(0);
    let mut baselines = Vec::new();
    if k_max > 0 {
        baselines.push(("ref".to_string(), exp.evaluate_test(cfg, &RefPredictor)?));
        baselines.push(("retrieval_only".to_string(), exp.evaluate_test(cfg, &RetrievalOnlyPredictor(k_max))?));
    }
    Ok(SweepResult { cells, best, baselines, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenefitConfig {
    pub synth: SynthSpec,
    pub experiment: ExperimentConfig,
    /// Reference count of the informed model; the other uses none.
    pub k: usize,
    /// Also train the informed model on pure-noise references.
    pub noise_ablation: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenefitReport {
    pub with_refs: EvalReport,
    pub without_refs: EvalReport,
    pub noise_refs: Option<EvalReport>,
    pub ref_baseline: EvalReport,
    pub retrieval_only: EvalReport,
}

impl BenefitReport {
    /// `rmse(K = 0) - rmse(K > 0)` per rate.
    pub fn gaps(&self) -> Vec<(f64, f64)> {
        self.with_refs
            .per_rate
            .iter()
            .zip(&self.without_refs.per_rate)
            .map(|(a, b)| (a.r, b.rmse - a.rmse))
            .collect()
    }
}

fn with_noise_refs(set: &SampleSet, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = set.clone();
    for s in &mut out.samples {
        for r in &mut s.refs {
            r.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
        }
    }
    out
}

/// Trains two models identical except for `K` on the same synthetic data
/// and reports both on the same test masks.
pub fn reference_benefit_experiment(cfg: &BenefitConfig) -> Result<BenefitReport, TrainError> {
    let db = synth_data_gen(&cfg.synth)?;
    let mut ecfg = cfg.experiment.clone();
    ecfg.ks = vec![cfg.k];
    let exp = Experiment::prepare(&db, &ecfg)?;
    let lr = *ecfg.lrs.first().ok_or_else(|| TrainError::InvalidConfig("empty lr grid".into()))?;
    let (informed, _) = exp.fit(&ecfg, cfg.k, lr)?;
    let (blind, _) = exp.fit(&ecfg, 0, lr)?;
    let noise_refs = if cfg.noise_ablation {
        let noisy = Experiment {
            train: with_noise_refs(&exp.train, mix_seed(&[ecfg.seed, 11])),
            val: with_noise_refs(&exp.val, mix_seed(&[ecfg.seed, 12])),
            test: with_noise_refs(&exp.test, mix_seed(&[ecfg.seed, 13])),
            ..exp.clone()
        };
        let (m, _) = noisy.fit(&ecfg, cfg.k, lr)?;
        Some(noisy.evaluate_test(&ecfg, &ModelPredictor(&m))?)
    } else {
        None
    };
    Ok(BenefitReport {
        with_refs: exp.evaluate_test(&ecfg, &ModelPredictor(&informed))?,
        without_refs: exp.evaluate_test(&ecfg, &ModelPredictor(&blind))?,
        noise_refs,
        ref_baseline: exp.evaluate_test(&ecfg, &RefPredictor)?,
        retrieval_only: exp.evaluate_test(&ecfg, &RetrievalOnlyPredictor(cfg.k))?,
    })
}

impl ExperimentConfig {
    /// Desk-scale defaults: single setting, `T = 24`, a small network and
    /// batches of 16 so that a few hundred windows still give many steps.
    pub fn desk(task: Task, seed: u64) -> Self {
        let rates = vec![0.2, 0.4, 0.6, 0.8];
        let mut train = TrainConfig::new(task, rates.clone(), seed);
        train.max_epochs = 60;
        train.batch_size = 16;
        Self {
            setting: SplitMode::Single,
            task,
            window: 24,
            d: 16,
            blocks: 1,
            heads: 2,
            ks: vec![5],
            lrs: vec![1e-3],
            rates,
            split_seed: seed,
            seed,
            train,
            rwr: RwrParams::default(),
            denormalize: false,
            eval_draws: 8,
        }
    }

    /// The full-size grid: 8 blocks of 4 heads, `K` in {1, 5, 10, 20}, two
    /// learning rates, batches of 100 and patience 10.
    pub fn full_scale(task: Task, seed: u64) -> Self {
        let mut cfg = Self::desk(task, seed);
        cfg.d = 64;
        cfg.blocks = 8;
        cfg.heads = 4;
        cfg.ks = vec![1, 5, 10, 20];
        cfg.lrs = vec![1e-3, 1e-4];
        cfg.train.batch_size = 100;
        cfg.train.max_epochs = 200;
        cfg.eval_draws = 1;
        cfg
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.train.exec = exec;
        self
    }
}
