//! Non-learned completions built from the references alone.

use crate::data::{Snippet, TimeSeriesDB};
use crate::graph::{select_reference_span, SpanPolicy};

use super::eval::Predictor;
use super::samples::Sample;
use super::TrainError;

/// The rank-1 reference, verbatim.
pub fn baseline_ref(refs: &[Snippet]) -> Result<Snippet, TrainError> {
    refs.first().cloned().ok_or(TrainError::NoReferences)
}

/// Pointwise mean of the references.
pub fn baseline_retrieval_only(refs: &[Snippet]) -> Result<Snippet, TrainError> {
    let first = refs.first().ok_or(TrainError::NoReferences)?;
    let rows: Vec<&[f64]> = refs.iter().map(|r| r.values.as_slice()).collect();
    Ok(first.with_values(mean_of(&rows)))
}

fn mean_of(rows: &[&[f64]]) -> Vec<f64> {
    let mut acc = vec![0.0; rows[0].len()];
    for row in rows {
        for (a, x) in acc.iter_mut().zip(row.iter()) {
            *a += x;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Direct neighbours of `series` in ascending index order, at most `k`,
/// each placed by `policy` relative to the target window.
pub fn baseline_first_order(
    db: &TimeSeriesDB,
    series: usize,
    k: usize,
    target_start: i64,
    len: usize,
    policy: &SpanPolicy,
) -> Result<Vec<Snippet>, TrainError> {
    let neighbors = db.graph().neighbors(series);
    if neighbors.is_empty() || k == 0 {
        return Err(TrainError::NoReferences);
    }
    neighbors
        .iter()
        .take(k)
        .map(|&j| Ok(select_reference_span(db, j, target_start, len, policy)?))
        .collect()
}

pub struct RefPredictor;

impl Predictor for RefPredictor {
    fn k(&self) -> usize {
        1
    }

    fn predict(&self, sample: &Sample, _: &[f64]) -> Result<Vec<f64>, TrainError> {
        sample.refs.first().cloned().ok_or(TrainError::NoReferences)
    }
}

pub struct RetrievalOnlyPredictor(pub usize);

impl Predictor for RetrievalOnlyPredictor {
    fn k(&self) -> usize {
        self.0
    }

    fn predict(&self, sample: &Sample, _: &[f64]) -> Result<Vec<f64>, TrainError> {
        if self.0 == 0 || sample.refs.len() < self.0 {
            return Err(TrainError::NoReferences);
        }
        let rows: Vec<&[f64]> = sample.refs[..self.0].iter().map(Vec::as_slice).collect();
        Ok(mean_of(&rows))
    }
}
