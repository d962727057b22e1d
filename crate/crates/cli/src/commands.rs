use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use refcast::data::{fit_norm_stats, load_dataset, split, write_dataset, Mask, Snippet, SplitSpec, TimeSeriesDB};
use refcast::graph::{rank, attach_spans, RetrievalQuery, Retrieval, RwrParams, SpanPolicy};
use refcast::synthesis::{SynthesisConfig, SynthesisModel};
use refcast::trainer::{
    build_samples, eval_mask, run_sweep, synth_data_gen, uncertainty_delta, EvalReport, Experiment, ModelPredictor,
    Predictor, RetrievalSpec, SweepRow, SynthSpec, TheoryReport, TrainOutcome,
};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigFlags, RunConfig};
use crate::error::{CliError, EXIT_IO};

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn series_index(db: &TimeSeriesDB, id: &str) -> Result<usize, CliError> {
    Ok(db.index_of(id)?)
}

// ---------------------------------------------------------------- synth-gen

#[derive(Args, Debug)]
pub struct SynthGenArgs {
    /// Output dataset directory.
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    /// Series length T'.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub period: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Std of the i.i.d. observation noise.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub community_size: Option<usize>,
    #[arg(long)]
    pub max_shift: Option<usize>,
    #[arg(long)]
    pub drift: Option<f64>,
    #[arg(long)]
    pub idiosyncratic: Option<f64>,
}

pub fn synth_gen(a: &SynthGenArgs) -> Result<(), CliError> {
    let mut spec = SynthSpec::desk(a.seed);
    macro_rules! take {
        ($($f:ident => $slot:ident),*) => {$( if let Some(x) = a.$f { spec.$slot = x; } )*};
    }
    take!(n => n, t => t_prime, period => period, noise => noise, community_size => community_size,
          max_shift => max_shift, drift => drift, idiosyncratic => idiosyncratic);
    let db = synth_data_gen(&spec)?;
    write_dataset(&db, &a.out)?;
    eprintln!("wrote {} series x {} steps to {}", db.n(), db.t_prime(), a.out.display());
    Ok(())
}

// ---------------------------------------------------------------- retrieve

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum PolicyArg {
    Imputation,
    Periodic,
    HistoryOnly,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    /// Series id of the target.
    #[arg(long, conflicts_with = "relations", required_unless_present = "relations")]
    pub target: Option<String>,
    /// Series ids an external target is related to, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub relations: Option<Vec<String>>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Damping factor of the random walk.
    #[arg(long, default_value_t = RwrParams::default().c)]
    pub c: f64,
    #[arg(long, value_enum, default_value = "imputation")]
    pub policy: PolicyArg,
    /// Absolute start of the target window; defaults to the last full window.
    #[arg(long)]
    pub start: Option<i64>,
    /// Window length; defaults to the dataset period.
    #[arg(long)]
    pub len: Option<usize>,
    /// Observed prefix length for the history-only policy.
    #[arg(long)]
    pub tau: Option<usize>,
    /// Let the target's own history be a candidate.
    #[arg(long)]
    pub include_self: bool,
}

#[derive(Serialize)]
struct RetrieveOutput<'a> {
    #[serde(flatten)]
    retrieval: &'a Retrieval,
    policy: SpanPolicy,
    start: i64,
    len: usize,
}

pub fn retrieve(a: &RetrieveArgs) -> Result<(), CliError> {
    let db = load_dataset(&a.data)?;
    let len = a.len.unwrap_or(db.period());
    if len == 0 || len > db.t_prime() {
        return Err(CliError::usage(format!("window length {len} outside 1..={}", db.t_prime())));
    }
    let start = a.start.unwrap_or(db.start_time() + ((db.t_prime() / len - 1) * len) as i64);
    let policy = match a.policy {
        PolicyArg::Imputation => SpanPolicy::imputation(),
        PolicyArg::Periodic => SpanPolicy::forecasting_periodic(db.period())?,
        PolicyArg::HistoryOnly => {
            let tau = a.tau.ok_or_else(|| CliError::usage("--policy history-only needs --tau"))?;
            SpanPolicy::forecasting_history_only(len, tau)?
        }
    };
    let query = match (&a.target, &a.relations) {
        (Some(id), _) => RetrievalQuery::for_series(&db, series_index(&db, id)?, start, len, a.include_self),
        (None, Some(ids)) => {
            let relations = ids.iter().map(|id| series_index(&db, id)).collect::<Result<Vec<_>, _>>()?;
            RetrievalQuery { target_id: "query".into(), relations, exclude: vec![], start, len }
        }
        (None, None) => return Err(CliError::usage("either --target or --relations is required")),
    };
    let params = RwrParams { c: a.c, ..RwrParams::default() };
    let ranked = rank(db.graph(), &query.relations, &query.exclude, a.k, &params)?;
    let retrieval = attach_spans(&db, &query, &ranked, &policy, params.c)?;
    let out = RetrieveOutput { retrieval: &retrieval, policy, start, len };
    println!("{}", serde_json::to_string_pretty(&out).map_err(|e| CliError::usage(e.to_string()))?);
    Ok(())
}

// ---------------------------------------------------------------- train

pub const CHECKPOINT: &str = "model.json";

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigFlags,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    k: usize,
    lr: f64,
    outcome: &'a TrainOutcome,
    val: &'a EvalReport,
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let run = RunConfig::resolve(&a.cfg)?;
    let cfg = run.experiment()?;
    let db = load_dataset(&run.data.dir)?;
    let exp = Experiment::prepare(&db, &cfg)?;
    let (k, lr) = (cfg.ks[0], cfg.lrs[0]);
    eprintln!("training k = {k}, lr = {lr} on {} windows ({} val)", exp.train.len(), exp.val.len());
    let (model, outcome) = exp.fit(&cfg, k, lr)?;
    let val = exp.evaluate_val(&cfg, &ModelPredictor(&model))?;
    let out = &run.data.out;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    model.save(&out.join(CHECKPOINT)).map_err(|e| CliError { code: EXIT_IO, message: e.to_string() })?;
    write_json(&out.join("history.json"), &TrainSummary { k, lr, outcome: &outcome, val: &val })?;
    let toml = toml::to_string(&run).map_err(|e| CliError::usage(e.to_string()))?;
    write_file(&out.join("run.toml"), toml.as_bytes())?;
    eprintln!(
        "best epoch {} of {}, val rmse {:.4}; checkpoint {}",
        outcome.best_epoch,
        outcome.stopped_epoch,
        val.rmse,
        out.join(CHECKPOINT).display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path, expected: &SynthesisConfig) -> Result<SynthesisModel, CliError> {
    if !path.exists() {
        return Err(CliError::usage(format!("checkpoint {} not found", path.display())));
    }
    Ok(SynthesisModel::load_expecting(path, expected)?)
}

// ---------------------------------------------------------------- infer

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub cfg: ConfigFlags,
    /// Defaults to `<out>/model.json`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Series id of the target.
    #[arg(long)]
    pub target: String,
    /// Absolute start of the target window; defaults to the last full window.
    #[arg(long)]
    pub start: Option<i64>,
    /// Partially observed window, header `t,var_1,..`; empty cells are
    /// missing. Without it the window is read from the dataset and masked
    /// at the first configured rate.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Defaults to `<out>/completed.csv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Raw `[T, v]` values (unobserved entries zero) and the observed flags.
fn read_partial(path: &Path, t: usize, v: usize) -> Result<(Vec<f64>, Vec<bool>), CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header: Vec<String> = rdr.headers().map_err(|e| CliError::io(path, e))?.iter().map(str::to_owned).collect();
    let expected: Vec<String> =
        std::iter::once("t".to_string()).chain((1..=v).map(|j| format!("var_{j}"))).collect();
    if header != expected {
        return Err(CliError::usage(format!("{}: header {header:?}, expected {expected:?}", path.display())));
    }
    let (mut values, mut seen) = (Vec::with_capacity(t * v), Vec::with_capacity(t * v));
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        for cell in rec.iter().skip(1) {
            let cell = cell.trim();
            if cell.is_empty() {
                values.push(0.0);
                seen.push(false);
            } else {
                let x: f64 = cell
                    .parse()
                    .ok()
                    .filter(|x: &f64| x.is_finite())
                    .ok_or_else(|| CliError::usage(format!("{}: bad cell {cell:?} on row {}", path.display(), line + 1)))?;
                values.push(x);
                seen.push(true);
            }
        }
    }
    if values.len() != t * v {
        return Err(CliError::usage(format!("{}: {} cells, expected {t} rows of {v}", path.display(), values.len())));
    }
    Ok((values, seen))
}

pub fn infer(a: &InferArgs) -> Result<(), CliError> {
    let run = RunConfig::resolve(&a.cfg)?;
    let cfg = run.experiment()?;
    let db = load_dataset(&run.data.dir)?;
    let (t, v, k) = (cfg.window, db.v(), cfg.ks[0]);
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| run.data.out.join(CHECKPOINT));
    let model = load_checkpoint(&ckpt, &cfg.model_config(k, v))?;
    let series = series_index(&db, &a.target)?;
    if t == 0 || t > db.t_prime() {
        return Err(CliError::usage(format!("window {t} outside 1..={}", db.t_prime())));
    }
    let start = a.start.unwrap_or(db.start_time() + ((db.t_prime() / t - 1) * t) as i64);

    let partition = split(&db, &SplitSpec::new(cfg.setting, cfg.split_seed), t)?;
    let stats = fit_norm_stats(&db, &partition)?;
    let spec = RetrievalSpec { k_max: k, policy: cfg.policy(&db)?, rwr: cfg.rwr };
    let sample = build_samples(&db, &stats, &partition, &[(series, start)], t, &spec, cfg.train.exec)?.samples.remove(0);

    let (raw, seen) = match &a.input {
        Some(path) => read_partial(path, t, v)?,
        None => {
            let rate = cfg.rates[0];
            let mask = eval_mask(cfg.task, &sample, t, v, rate, cfg.seed)?;
            (db.window(series, start, t)?.values, mask.bits)
        }
    };
    if !seen.iter().any(|&b| b) {
        return Err(CliError::usage("target window has no observed cells"));
    }
    let as_snippet = |values: Vec<f64>| Snippet::new(values, t, v, start, db.series_ids()[series].clone());
    let normalized = stats.normalize(&as_snippet(raw.clone())?)?;
    let masked: Vec<f64> = normalized.values.iter().zip(&seen).map(|(x, &s)| if s { *x } else { 0.0 }).collect();
    let pred = ModelPredictor(&model).predict(&sample, &masked)?;
    if pred.iter().any(|x| !x.is_finite()) {
        return Err(CliError::numeric("model produced non-finite values"));
    }
    let pred_raw = stats.denormalize(&as_snippet(pred)?)?;
    let completed = Mask::from_bits(seen.clone(), t, v)?.splice(&as_snippet(raw)?, &pred_raw)?.values;

    let mut text = String::from("series_id,t");
    (1..=v).for_each(|j| text.push_str(&format!(",var_{j}")));
    (1..=v).for_each(|j| text.push_str(&format!(",observed_{j}")));
    text.push('\n');
    for step in 0..t {
        text.push_str(&format!("{},{}", db.series_ids()[series], start + step as i64));
        for j in 0..v {
            text.push_str(&format!(",{}", completed[step * v + j]));
        }
        for j in 0..v {
            text.push_str(if seen[step * v + j] { ",1" } else { ",0" });
        }
        text.push('\n');
    }
    let output = a.output.clone().unwrap_or_else(|| run.data.out.join("completed.csv"));
    write_file(&output, text.as_bytes())?;
    eprintln!("completed {} missing cells of {}; wrote {}", seen.iter().filter(|s| !**s).count(), t * v, output.display());
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigFlags,
    /// Evaluate this checkpoint instead of training the grid; it must match
    /// the first k of the configuration.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
pub struct CellSummary {
    pub k: usize,
    pub lr: f64,
    pub val_rmse: Option<f64>,
    pub best_epoch: Option<usize>,
    pub stopped_epoch: Option<usize>,
    pub test: EvalReport,
}

/// Contents of `report.json`.
#[derive(Serialize, Deserialize)]
pub struct ReportFile {
    pub config: RunConfig,
    /// Index into `cells` of the model reported as `test`.
    pub best: usize,
    pub test: EvalReport,
    pub cells: Vec<CellSummary>,
    pub baselines: BTreeMap<String, EvalReport>,
}

fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for row in rows {
        wtr.serialize(row).map_err(|e| CliError::io(path, e))?;
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::io(path, e))?;
    write_file(path, &bytes)
}

fn rows_for(cfg: &refcast::trainer::ExperimentConfig, k: usize, lr: f64, report: &EvalReport) -> Vec<SweepRow> {
    report
        .per_rate
        .iter()
        .map(|m| SweepRow {
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
        })
        .collect()
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let run = RunConfig::resolve(&a.cfg)?;
    let cfg = run.experiment()?;
    let db = load_dataset(&run.data.dir)?;
    let (report, rows) = match &a.checkpoint {
        Some(path) => {
            let (k, lr) = (cfg.ks[0], cfg.lrs[0]);
            let model = load_checkpoint(path, &cfg.model_config(k, db.v()))?;
            let exp = Experiment::prepare(&db, &cfg)?;
            let test = exp.evaluate_test(&cfg, &ModelPredictor(&model))?;
            let mut baselines = BTreeMap::new();
            if k > 0 {
                baselines.insert("ref".into(), exp.evaluate_test(&cfg, &refcast::trainer::RefPredictor)?);
                baselines
                    .insert("retrieval_only".into(), exp.evaluate_test(&cfg, &refcast::trainer::RetrievalOnlyPredictor(k))?);
            }
            let rows = rows_for(&cfg, k, lr, &test);
            let cell = CellSummary { k, lr, val_rmse: None, best_epoch: None, stopped_epoch: None, test: test.clone() };
            (ReportFile { config: run.clone(), best: 0, test, cells: vec![cell], baselines }, rows)
        }
        None => {
            let sweep = run_sweep(&db, &cfg)?;
            let cells: Vec<CellSummary> = sweep
                .cells
                .iter()
                .map(|c| CellSummary {
                    k: c.k,
                    lr: c.lr,
                    val_rmse: Some(c.val_rmse),
                    best_epoch: Some(c.outcome.best_epoch),
                    stopped_epoch: Some(c.outcome.stopped_epoch),
                    test: c.test.clone(),
                })
                .collect();
            let test = sweep.cells[sweep.best].test.clone();
            let report = ReportFile {
                config: run.clone(),
                best: sweep.best,
                test,
                cells,
                baselines: sweep.baselines.into_iter().collect(),
            };
            (report, sweep.rows)
        }
    };
    let out = &run.data.out;
    write_json(&out.join("report.json"), &report)?;
    write_sweep(&out.join("sweep.csv"), &rows)?;
    let best = &report.cells[report.best];
    eprintln!("best cell k = {}, lr = {}: test rmse {:.4}", best.k, best.lr, report.test.rmse);
    for (name, b) in &report.baselines {
        eprintln!("  {name}: rmse {:.4}", b.rmse);
    }
    eprintln!("wrote {} and {}", out.join("report.json").display(), out.join("sweep.csv").display());
    Ok(())
}

// ---------------------------------------------------------------- theory-check

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["mse", "sigma", "report"]))]
pub struct TheoryArgs {
    /// Mean squared error of a completion.
    #[arg(long)]
    pub mse: Option<f64>,
    /// Residual standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Number of variates.
    #[arg(long, default_value_t = 1)]
    pub v: usize,
    /// Re-check every uncertainty entry of an eval `report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Serialize)]
struct TheoryLine<'a> {
    source: &'a str,
    sigma_hat: f64,
    delta: f64,
    mse: f64,
    v: usize,
    consistent: bool,
}

/// The uncertainty entry agrees with its own MSE.
fn consistent(t: &TheoryReport) -> bool {
    let delta_ok = match uncertainty_delta(t.sigma_hat, t.v) {
        Ok(d) => d == t.delta,
        Err(_) => t.mse == 0.0 && t.delta == f64::NEG_INFINITY,
    };
    delta_ok && (t.sigma_hat * t.sigma_hat - t.mse).abs() <= 1e-12 * t.mse.max(1.0)
}

fn print_line(source: &str, t: &TheoryReport) -> Result<bool, CliError> {
    let ok = consistent(t);
    let line = TheoryLine { source, sigma_hat: t.sigma_hat, delta: t.delta, mse: t.mse, v: t.v, consistent: ok };
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", serde_json::to_string(&line).map_err(|e| CliError::usage(e.to_string()))?)
        .map_err(|e| CliError { code: EXIT_IO, message: e.to_string() })?;
    Ok(ok)
}

pub fn theory_check(a: &TheoryArgs) -> Result<(), CliError> {
    if a.v == 0 {
        return Err(CliError::usage("--v must be at least 1"));
    }
    if let Some(path) = &a.report {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let report: ReportFile =
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut entries: Vec<(String, TheoryReport)> = Vec::new();
        let mut push = |name: &str, r: &EvalReport| {
            entries.push((name.to_string(), r.theory));
            entries.extend(r.per_rate.iter().map(|m| (format!("{name}@r={}", m.r), m.theory)));
        };
        push("test", &report.test);
        for (name, b) in &report.baselines {
            push(name, b);
        }
        let mut all_ok = true;
        for (name, t) in &entries {
            all_ok &= print_line(name, t)?;
        }
        return if all_ok { Ok(()) } else { Err(CliError::numeric("uncertainty entries inconsistent with their MSE")) };
    }
    let mse = match (a.mse, a.sigma) {
        (Some(m), _) => m,
        (None, Some(s)) => s * s,
        (None, None) => unreachable!("clap requires a source"),
    };
    if !(mse > 0.0 && mse.is_finite()) {
        return Err(CliError::usage(format!("mse {mse} must be positive and finite")));
    }
    print_line("input", &TheoryReport::from_mse(mse, a.v))?;
    Ok(())
}
