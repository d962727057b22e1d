//! Dataset ingestion, normalization, snippets, masks and splits.
//!
//! A dataset lives in a directory with three files:
//!
//! * `series.csv`: header `series_id,t,var_1,..,var_v`; one row per
//!   `(series, step)` cell, any order, every cell present exactly once.
//! * `graph.csv`: header `src,dst`; undirected edges by series id.
//! * `meta.json`: `n`, `t_prime`, `v`, `start_time`, `step_unit`, `period`.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{GraphError, RelationGraph};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid meta.json: {0}")]
    Meta(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-numeric cell at line {line}: {value:?}")]
    NonNumeric { line: usize, value: String },
    #[error("non-finite value at line {line}")]
    NonFinite { line: usize },
    #[error("duplicate cell ({series}, t={t})")]
    DuplicateCell { series: String, t: i64 },
    #[error("unknown series id {0}")]
    UnknownSeries(String),
    #[error("zero variance in variate {0}")]
    ZeroVariance(usize),
    #[error("variate count mismatch: {0} vs {1}")]
    VariateMismatch(usize, usize),
    #[error("snippet length {len} invalid for series of length {t_prime}")]
    SnippetLength { len: usize, t_prime: usize },
    #[error("invalid missing rate {0}")]
    InvalidRate(f64),
    #[error("mask would observe {observed} of {total} entries")]
    DegenerateMask { observed: usize, total: usize },
    #[error("split {0} would be empty")]
    EmptySplit(&'static str),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("window [{start}, {end}) outside recorded range [{db_start}, {db_end})")]
    OutOfRange { start: i64, end: i64, db_start: i64, db_end: i64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub n: usize,
    pub t_prime: usize,
    pub v: usize,
    pub start_time: i64,
    pub step_unit: String,
    /// Steps per seasonal cycle.
    pub period: usize,
}

/// `N` series of `T'` steps and `v` variates plus their relation graph.
#[derive(Clone, Debug)]
pub struct TimeSeriesDB {
    values: Vec<f64>,
    meta: DatasetMeta,
    series_ids: Vec<String>,
    id_index: HashMap<String, usize>,
    graph: RelationGraph,
}

impl TimeSeriesDB {
    /// `values` is row-major `[n][t_prime][v]`.
    pub fn new(
        meta: DatasetMeta,
        series_ids: Vec<String>,
        values: Vec<f64>,
        graph: RelationGraph,
    ) -> Result<Self, DataError> {
        if meta.n == 0 || meta.t_prime == 0 || meta.v == 0 {
            return Err(DataError::DimensionMismatch(format!(
                "dimensions must be positive, got ({}, {}, {})",
                meta.n, meta.t_prime, meta.v
            )));
        }
        if series_ids.len() != meta.n || values.len() != meta.n * meta.t_prime * meta.v {
            return Err(DataError::DimensionMismatch(format!(
                "{} ids and {} values for ({}, {}, {})",
                series_ids.len(),
                values.len(),
                meta.n,
                meta.t_prime,
                meta.v
            )));
        }
        if graph.n_nodes() != meta.n {
            return Err(DataError::DimensionMismatch(format!(
                "graph has {} nodes for {} series",
                graph.n_nodes(),
                meta.n
            )));
        }
        if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
            return Err(DataError::NonFinite { line: pos });
        }
        let mut id_index = HashMap::with_capacity(series_ids.len());
        for (i, id) in series_ids.iter().enumerate() {
            if id_index.insert(id.clone(), i).is_some() {
                return Err(DataError::DimensionMismatch(format!("duplicate series id {id}")));
            }
        }
        Ok(Self { values, meta, series_ids, id_index, graph })
    }

    pub fn n(&self) -> usize {
        self.meta.n
    }

    pub fn t_prime(&self) -> usize {
        self.meta.t_prime
    }

    pub fn v(&self) -> usize {
        self.meta.v
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.meta.n, self.meta.t_prime, self.meta.v)
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn start_time(&self) -> i64 {
        self.meta.start_time
    }

    /// One past the last recorded absolute step.
    pub fn end_time(&self) -> i64 {
        self.meta.start_time + self.meta.t_prime as i64
    }

    pub fn period(&self) -> usize {
        self.meta.period
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series_ids
    }

    pub fn graph(&self) -> &RelationGraph {
        &self.graph
    }

    pub fn index_of(&self, id: &str) -> Result<usize, DataError> {
        self.id_index.get(id).copied().ok_or_else(|| DataError::UnknownSeries(id.to_string()))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, series: usize, step: usize, var: usize) -> f64 {
        let (_, t, v) = self.dims();
        self.values[(series * t + step) * v + var]
    }

    /// `[step][var]` slice for one series.
    pub fn series(&self, series: usize) -> &[f64] {
        let stride = self.meta.t_prime * self.meta.v;
        &self.values[series * stride..(series + 1) * stride]
    }

    /// Window `[start, start + len)` in absolute steps.
    pub fn window(&self, series: usize, start: i64, len: usize) -> Result<Snippet, DataError> {
        let end = start + len as i64;
        if len == 0 || start < self.start_time() || end > self.end_time() {
            return Err(DataError::OutOfRange {
                start,
                end,
                db_start: self.start_time(),
                db_end: self.end_time(),
            });
        }
        let v = self.meta.v;
        let off = (start - self.start_time()) as usize;
        let values = self.series(series)[off * v..(off + len) * v].to_vec();
        Ok(Snippet { values, len, vars: v, start, series_id: self.series_ids[series].clone() })
    }
}

/// A `T x v` window of one series starting at absolute step `start`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub values: Vec<f64>,
    pub len: usize,
    pub vars: usize,
    pub start: i64,
    pub series_id: String,
}

impl Snippet {
    pub fn new(values: Vec<f64>, len: usize, vars: usize, start: i64, series_id: impl Into<String>) -> Result<Self, DataError> {
        if len == 0 || vars == 0 || values.len() != len * vars {
            return Err(DataError::DimensionMismatch(format!(
                "{} values for a {len} x {vars} snippet",
                values.len()
            )));
        }
        Ok(Self { values, len, vars, start, series_id: series_id.into() })
    }

    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.values[t * self.vars + j]
    }

    pub fn end(&self) -> i64 {
        self.start + self.len as i64
    }

    /// Same metadata, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self { values, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MaskKind {
    /// Steps `>= tau` unobserved.
    Forecast { tau: usize },
    Impute { rate: f64, seed: u64 },
    /// Supplied by the caller, e.g. gaps in a partially observed input.
    Given,
}

/// Presence indicator over a `T x v` snippet; `true` means observed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub bits: Vec<bool>,
    pub len: usize,
    pub vars: usize,
    pub kind: MaskKind,
}

fn check_rate(r: f64) -> Result<(), DataError> {
    if !(r > 0.0 && r < 1.0) {
        return Err(DataError::InvalidRate(r));
    }
    Ok(())
}

/// Observed prefix length for a forecasting mask: `floor(T * (1 - r))`.
pub fn forecast_tau(len: usize, r: f64) -> usize {
    // the epsilon absorbs representation error, e.g. 5 * (1 - 0.8) = 0.99999..
    (len as f64 * (1.0 - r) + 1e-9).floor() as usize
}

pub fn make_forecast_mask(len: usize, r: f64, vars: usize) -> Result<Mask, DataError> {
    check_rate(r)?;
    let tau = forecast_tau(len, r);
    if tau == 0 || tau >= len {
        return Err(DataError::DegenerateMask { observed: tau * vars, total: len * vars });
    }
    let bits = (0..len * vars).map(|i| i / vars < tau).collect();
    Ok(Mask { bits, len, vars, kind: MaskKind::Forecast { tau } })
}

/// Exactly `round(r * T * v)` entries unobserved, chosen by the seeded generator.
/// The seed fixes one ordering of the entries and a rate hides a prefix of it,
/// so under one seed a higher rate hides a superset.
pub fn make_impute_mask(len: usize, vars: usize, r: f64, seed: u64) -> Result<Mask, DataError> {
    check_rate(r)?;
    let total = len * vars;
    let missing = (r * total as f64).round() as usize;
    if missing == 0 || missing >= total {
        return Err(DataError::DegenerateMask { observed: total - missing.min(total), total });
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut bits = vec![true; total];
    for &i in &order[..missing] {
        bits[i] = false;
    }
    Ok(Mask { bits, len, vars, kind: MaskKind::Impute { rate: r, seed } })
}

impl Mask {
    pub fn observed(&self, t: usize, j: usize) -> bool {
        self.bits[t * self.vars + j]
    }

    pub fn missing_count(&self) -> usize {
        self.bits.iter().filter(|b| !**b).count()
    }

    /// First unobserved step for variate `j`, if any.
    pub fn first_missing_step(&self, j: usize) -> Option<usize> {
        (0..self.len).find(|&t| !self.observed(t, j))
    }

    /// `M ⊙ X`: unobserved entries become 0.0.
    pub fn apply(&self, x: &Snippet) -> Result<Snippet, DataError> {
        if x.len != self.len || x.vars != self.vars {
            return Err(DataError::DimensionMismatch(format!(
                "mask {}x{} on snippet {}x{}",
                self.len, self.vars, x.len, x.vars
            )));
        }
        Ok(x.with_values(x.values.iter().zip(&self.bits).map(|(v, &b)| if b { *v } else { 0.0 }).collect()))
    }

    /// Caller-supplied observation flags, row-major `[T, v]`.
    pub fn from_bits(bits: Vec<bool>, len: usize, vars: usize) -> Result<Self, DataError> {
        if bits.len() != len * vars {
            return Err(DataError::DimensionMismatch(format!("{} flags for a {len}x{vars} mask", bits.len())));
        }
        Ok(Self { bits, len, vars, kind: MaskKind::Given })
    }

    /// The completed snippet: `observed` where the mask is set, `predicted`
    /// elsewhere. Observed values are copied bit for bit.
    pub fn splice(&self, observed: &Snippet, predicted: &Snippet) -> Result<Snippet, DataError> {
        for x in [observed, predicted] {
            if x.len != self.len || x.vars != self.vars {
                return Err(DataError::DimensionMismatch(format!(
                    "mask {}x{} on snippet {}x{}",
                    self.len, self.vars, x.len, x.vars
                )));
            }
        }
        let values = self
            .bits
            .iter()
            .zip(observed.values.iter().zip(&predicted.values))
            .map(|(&b, (x, y))| if b { *x } else { *y })
            .collect();
        Ok(observed.with_values(values))
    }

    pub fn as_weights(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn missing_weights(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(vars: usize) -> Self {
        Self { mean: vec![0.0; vars], std: vec![1.0; vars] }
    }

    fn check(&self, x: &Snippet) -> Result<(), DataError> {
        if x.vars != self.mean.len() {
            return Err(DataError::VariateMismatch(x.vars, self.mean.len()));
        }
        Ok(())
    }

    pub fn normalize(&self, x: &Snippet) -> Result<Snippet, DataError> {
        self.check(x)?;
        let v = x.vars;
        Ok(x.with_values(
            x.values.iter().enumerate().map(|(i, u)| (u - self.mean[i % v]) / self.std[i % v]).collect(),
        ))
    }

    pub fn denormalize(&self, x: &Snippet) -> Result<Snippet, DataError> {
        self.check(x)?;
        let v = x.vars;
        Ok(x.with_values(
            x.values.iter().enumerate().map(|(i, u)| u * self.std[i % v] + self.mean[i % v]).collect(),
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Partition series.
    Single,
    /// Partition time windows shared by all series.
    SpatialTemporal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(mode: SplitMode, seed: u64) -> Self {
        Self { mode, fractions: (0.8, 0.1, 0.1), seed }
    }
}

/// Train/validation/test index sets: series indices in single mode,
/// window indices (windows of `window` steps from the DB start) otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub mode: SplitMode,
    pub window: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Partition {
    /// Every `(series, step offset range)` block of training data.
    pub fn train_cells(&self, db: &TimeSeriesDB) -> Vec<(usize, std::ops::Range<usize>)> {
        match self.mode {
            SplitMode::Single => self.train.iter().map(|&s| (s, 0..db.t_prime())).collect(),
            SplitMode::SpatialTemporal => (0..db.n())
                .flat_map(|s| self.train.iter().map(move |&w| (s, w * self.window..(w + 1) * self.window)))
                .collect(),
        }
    }
}

/// Splits `db`; leftovers after flooring the validation and test shares go to training.
pub fn split(db: &TimeSeriesDB, spec: &SplitSpec, window: usize) -> Result<Partition, DataError> {
    let (ftr, fva, fte) = spec.fractions;
    if (ftr + fva + fte - 1.0).abs() > 1e-9 || ftr < 0.0 || fva < 0.0 || fte < 0.0 {
        return Err(DataError::InvalidSplit(format!("fractions {:?} must be non-negative and sum to 1", spec.fractions)));
    }
    let count = match spec.mode {
        SplitMode::Single => db.n(),
        SplitMode::SpatialTemporal => {
            if window == 0 || window > db.t_prime() {
                return Err(DataError::SnippetLength { len: window, t_prime: db.t_prime() });
            }
            db.t_prime() / window
        }
    };
    partition_indices(count, spec, window)
}

pub(crate) fn partition_indices(count: usize, spec: &SplitSpec, window: usize) -> Result<Partition, DataError> {
    let (_, fva, fte) = spec.fractions;
    let n_val = (count as f64 * fva + 1e-9).floor() as usize;
    let n_test = (count as f64 * fte + 1e-9).floor() as usize;
    let n_train = count.saturating_sub(n_val + n_test);
    if n_val == 0 {
        return Err(DataError::EmptySplit("validation"));
    }
    if n_test == 0 {
        return Err(DataError::EmptySplit("test"));
    }
    if n_train == 0 {
        return Err(DataError::EmptySplit("train"));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut val = order[..n_val].to_vec();
    let mut test = order[n_val..n_val + n_test].to_vec();
    let mut train = order[n_val + n_test..].to_vec();
    val.sort_unstable();
    test.sort_unstable();
    train.sort_unstable();
    Ok(Partition { mode: spec.mode, window, train, val, test })
}

/// Per-variate mean and population standard deviation over training cells.
pub fn fit_norm_stats(db: &TimeSeriesDB, partition: &Partition) -> Result<NormStats, DataError> {
    let cells = partition.train_cells(db);
    if cells.is_empty() {
        return Err(DataError::EmptySplit("train"));
    }
    let v = db.v();
    // Welford accumulators per variate
    let mut count = 0usize;
    let mut mean = vec![0.0; v];
    let mut m2 = vec![0.0; v];
    for (s, range) in cells {
        let series = db.series(s);
        for t in range {
            count += 1;
            for j in 0..v {
                let x = series[t * v + j];
                let delta = x - mean[j];
                mean[j] += delta / count as f64;
                m2[j] += delta * (x - mean[j]);
            }
        }
    }
    let mut std = Vec::with_capacity(v);
    for (j, m) in m2.iter().enumerate() {
        let sd = (m / count as f64).sqrt();
        if sd.is_nan() || sd <= 1e-12 {
            return Err(DataError::ZeroVariance(j));
        }
        std.push(sd);
    }
    Ok(NormStats { mean, std })
}

/// Windows of `len` steps every `stride` steps, for every series.
pub fn segment(db: &TimeSeriesDB, len: usize, stride: usize) -> Result<Vec<Snippet>, DataError> {
    let starts = window_starts(db.t_prime(), len, stride)?;
    let mut out = Vec::with_capacity(starts.len() * db.n());
    for s in 0..db.n() {
        for &off in &starts {
            out.push(db.window(s, db.start_time() + off as i64, len)?);
        }
    }
    Ok(out)
}

pub fn window_starts(t_prime: usize, len: usize, stride: usize) -> Result<Vec<usize>, DataError> {
    if len == 0 || len > t_prime {
        return Err(DataError::SnippetLength { len, t_prime });
    }
    if stride == 0 {
        return Err(DataError::InvalidSplit("stride must be at least 1".into()));
    }
    Ok((0..=t_prime - len).step_by(stride).collect())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

fn require(path: &Path) -> Result<(), DataError> {
    if !path.is_file() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta, DataError> {
    let path = dir.join("meta.json");
    require(&path)?;
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| DataError::Meta(e.to_string()))
}

/// Reads a dataset directory; `meta.json` is the schema the other two files
/// are checked against.
pub fn load_dataset(dir: &Path) -> Result<TimeSeriesDB, DataError> {
    let meta = read_meta(dir)?;
    let series_path = dir.join("series.csv");
    let graph_path = dir.join("graph.csv");
    require(&series_path)?;
    require(&graph_path)?;
    let (ids, values) = read_series(&series_path, &meta)?;
    let graph = read_graph(&graph_path, &ids)?;
    TimeSeriesDB::new(meta, ids, values, graph)
}

fn read_series(path: &Path, meta: &DatasetMeta) -> Result<(Vec<String>, Vec<f64>), DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(std::io::BufReader::new(file));
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| DataError::DimensionMismatch(e.to_string()))?,
        None => return Err(DataError::DimensionMismatch("series.csv is empty".into())),
    };
    let expected: Vec<String> = ["series_id".to_string(), "t".to_string()]
        .into_iter()
        .chain((1..=meta.v).map(|j| format!("var_{j}")))
        .collect();
    if header.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
        return Err(DataError::DimensionMismatch(format!(
            "series.csv header {:?}, expected {:?}",
            header.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    let (n, tp, v) = (meta.n, meta.t_prime, meta.v);
    let mut ids: Vec<String> = Vec::with_capacity(n);
    let mut index: HashMap<String, usize> = HashMap::with_capacity(n);
    let mut values = vec![0.0; n * tp * v];
    let mut filled = vec![false; n * tp];
    for (row, rec) in records.enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| DataError::DimensionMismatch(format!("line {line}: {e}")))?;
        if rec.len() != v + 2 {
            return Err(DataError::DimensionMismatch(format!("line {line}: {} columns, expected {}", rec.len(), v + 2)));
        }
        let id = rec[0].trim();
        let s = match index.get(id) {
            Some(&s) => s,
            None => {
                if ids.len() == n {
                    return Err(DataError::DimensionMismatch(format!("more than {n} series (line {line})")));
                }
                index.insert(id.to_string(), ids.len());
                ids.push(id.to_string());
                ids.len() - 1
            }
        };
        let t: i64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| DataError::NonNumeric { line, value: rec[1].to_string() })?;
        let off = t - meta.start_time;
        if off < 0 || off >= tp as i64 {
            return Err(DataError::DimensionMismatch(format!("line {line}: t={t} outside [{}, {})", meta.start_time, meta.start_time + tp as i64)));
        }
        let off = off as usize;
        if std::mem::replace(&mut filled[s * tp + off], true) {
            return Err(DataError::DuplicateCell { series: id.to_string(), t });
        }
        for j in 0..v {
            let cell = rec[2 + j].trim();
            let x: f64 = cell.parse().map_err(|_| DataError::NonNumeric { line, value: cell.to_string() })?;
            if !x.is_finite() {
                return Err(DataError::NonFinite { line });
            }
            values[(s * tp + off) * v + j] = x;
        }
    }
    if ids.len() != n {
        return Err(DataError::DimensionMismatch(format!("{} series in body, meta declares {n}", ids.len())));
    }
    if let Some(missing) = filled.iter().position(|f| !f) {
        return Err(DataError::DimensionMismatch(format!(
            "missing cell ({}, t={})",
            ids[missing / tp],
            meta.start_time + (missing % tp) as i64
        )));
    }
    Ok((ids, values))
}

fn read_graph(path: &Path, ids: &[String]) -> Result<RelationGraph, DataError> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| DataError::DimensionMismatch(e.to_string()))?;
    let headers = reader.headers().map_err(|e| DataError::DimensionMismatch(e.to_string()))?;
    if headers.iter().map(str::trim).ne(["src", "dst"]) {
        return Err(DataError::DimensionMismatch(format!("graph.csv header {headers:?}, expected src,dst")));
    }
    let mut edges = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| DataError::DimensionMismatch(e.to_string()))?;
        if rec.len() != 2 {
            return Err(DataError::DimensionMismatch(format!("graph.csv row with {} columns", rec.len())));
        }
        let a = *index.get(rec[0].trim()).ok_or_else(|| DataError::UnknownSeries(rec[0].to_string()))?;
        let b = *index.get(rec[1].trim()).ok_or_else(|| DataError::UnknownSeries(rec[1].to_string()))?;
        edges.push((a, b));
    }
    Ok(RelationGraph::from_edges(ids.len(), &edges)?)
}

/// Writes the three dataset files; output is byte-stable for a given DB.
pub fn write_dataset(db: &TimeSeriesDB, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta_path = dir.join("meta.json");
    let meta = serde_json::to_string_pretty(db.meta()).map_err(|e| DataError::Meta(e.to_string()))?;
    std::fs::write(&meta_path, meta + "\n").map_err(io_err(&meta_path))?;

    let series_path = dir.join("series.csv");
    let mut out = std::io::BufWriter::new(File::create(&series_path).map_err(io_err(&series_path))?);
    let (n, tp, v) = db.dims();
    let mut header = String::from("series_id,t");
    for j in 1..=v {
        header.push_str(&format!(",var_{j}"));
    }
    writeln!(out, "{header}").map_err(io_err(&series_path))?;
    for s in 0..n {
        for t in 0..tp {
            let mut line = format!("{},{}", db.series_ids()[s], db.start_time() + t as i64);
            for j in 0..v {
                line.push_str(&format!(",{}", db.value(s, t, j)));
            }
            writeln!(out, "{line}").map_err(io_err(&series_path))?;
        }
    }
    out.flush().map_err(io_err(&series_path))?;

    let graph_path = dir.join("graph.csv");
    let mut out = std::io::BufWriter::new(File::create(&graph_path).map_err(io_err(&graph_path))?);
    writeln!(out, "src,dst").map_err(io_err(&graph_path))?;
    for (a, b) in db.graph().edges() {
        writeln!(out, "{},{}", db.series_ids()[a], db.series_ids()[b]).map_err(io_err(&graph_path))?;
    }
    out.flush().map_err(io_err(&graph_path))?;
    Ok(())
}
