//! Precomputed (target window, references) pairs.
//!
//! Retrieval depends only on the target series, so the RWR ranking is
//! solved once per series and reused for all of its windows.

use serde::{Deserialize, Serialize};

use crate::data::{NormStats, Partition, SplitMode, TimeSeriesDB};
use crate::graph::{attach_spans, rank, RetrievalQuery, RwrParams, SpanPolicy};
use crate::par::Exec;

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

/// How references are found for every target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSpec {
    /// References retrieved per target; models may use any prefix.
    pub k_max: usize,
    pub policy: SpanPolicy,
    pub rwr: RwrParams,
}

/// One target window with its normalized truth and ranked references.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub series: usize,
    pub start: i64,
    /// Row-major `[T, v]`, normalized.
    pub truth: Vec<f64>,
    /// Up to `k_max` references, best first, normalized.
    pub refs: Vec<Vec<f64>>,
    pub ref_series: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SampleSet {
    pub t: usize,
    pub v: usize,
    pub samples: Vec<Sample>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn k_available(&self) -> usize {
        self.samples.iter().map(|s| s.refs.len()).min().unwrap_or(0)
    }
}

/// `(series, absolute start)` target windows for one split part. Windows
/// are the non-overlapping `window`-step blocks from the DB start; a block
/// qualifies only if the span policy can place references for it.
pub fn split_targets(
    db: &TimeSeriesDB,
    partition: &Partition,
    part: SplitPart,
    window: usize,
    policy: &SpanPolicy,
) -> Vec<(usize, i64)> {
    let chosen = match part {
        SplitPart::Train => &partition.train,
        SplitPart::Val => &partition.val,
        SplitPart::Test => &partition.test,
    };
    let eligible = |w: usize| (w * window) >= policy.delta_t;
    let abs = |w: usize| db.start_time() + (w * window) as i64;
    match partition.mode {
        SplitMode::Single => {
            let windows: Vec<usize> = (0..db.t_prime() / window).filter(|&w| eligible(w)).collect();
            chosen.iter().flat_map(|&s| windows.iter().map(move |&w| (s, abs(w)))).collect()
        }
        SplitMode::SpatialTemporal => (0..db.n())
            .flat_map(|s| chosen.iter().filter(|&&w| eligible(w)).map(move |&w| (s, abs(w))))
            .collect(),
    }
}

/// Retrieves and normalizes references for every target. In single mode the
/// database is the training series; in spatial-temporal mode it is every
/// series, with the target's own history allowed only when the policy looks
/// back in time.
pub fn build_samples(
    db: &TimeSeriesDB,
    stats: &NormStats,
    partition: &Partition,
    targets: &[(usize, i64)],
    window: usize,
    spec: &RetrievalSpec,
    exec: Exec,
) -> Result<SampleSet, TrainError> {
    let mut series: Vec<usize> = targets.iter().map(|t| t.0).collect();
    series.sort_unstable();
    series.dedup();
    let include_self = partition.mode == SplitMode::SpatialTemporal && spec.policy.allows_self();
    let outside_train: Vec<usize> = match partition.mode {
        SplitMode::Single => (0..db.n()).filter(|i| partition.train.binary_search(i).is_err()).collect(),
        SplitMode::SpatialTemporal => vec![],
    };
    let rankings = exec.try_map(&series, |&s| {
        let mut q = RetrievalQuery::for_series(db, s, 0, window, include_self);
        q.exclude.extend(&outside_train);
        if q.relations.is_empty() {
            // isolated target: nothing to walk from
            return Ok::<_, TrainError>((q, vec![]));
        }
        let ranked = if spec.k_max == 0 { vec![] } else { rank(db.graph(), &q.relations, &q.exclude, spec.k_max, &spec.rwr)? };
        Ok((q, ranked))
    })?;
    let lookup = |s: usize| &rankings[series.binary_search(&s).expect("series listed")];
    let samples = exec.try_map(targets, |&(s, start)| {
        let (q, ranked) = lookup(s);
        if ranked.len() < spec.k_max {
            return Err(TrainError::NoReferences);
        }
        let q = RetrievalQuery { start, ..q.clone() };
        let retrieval = attach_spans(db, &q, ranked, &spec.policy, spec.rwr.c)?;
        let truth = stats.normalize(&db.window(s, start, window)?)?.values;
        let refs = retrieval
            .references
            .iter()
            .map(|r| Ok(stats.normalize(&r.snippet)?.values))
            .collect::<Result<Vec<_>, TrainError>>()?;
        Ok(Sample { series: s, start, truth, refs, ref_series: ranked.iter().map(|r| r.0).collect() })
    })?;
    Ok(SampleSet { t: window, v: db.v(), samples })
}
