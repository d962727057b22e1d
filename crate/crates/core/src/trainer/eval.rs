use serde::{Deserialize, Serialize};

use crate::data::{make_forecast_mask, make_impute_mask, Mask, NormStats, SplitMode};
use crate::par::Exec;
use crate::synthesis::SynthesisModel;

use super::samples::{Sample, SampleSet};
use super::theory::TheoryReport;
use super::{mix_seed, Task, TrainError};

/// Anything that completes a masked target from its sample's references.
pub trait Predictor: Sync {
    /// References consulted per target.
    fn k(&self) -> usize;

    /// Full `[T, v]` completion; `masked_target` has unobserved entries zeroed.
    fn predict(&self, sample: &Sample, masked_target: &[f64]) -> Result<Vec<f64>, TrainError>;
}

pub struct ModelPredictor<'m>(pub &'m SynthesisModel);

impl Predictor for ModelPredictor<'_> {
    fn k(&self) -> usize {
        self.0.config().k
    }

    fn predict(&self, sample: &Sample, masked_target: &[f64]) -> Result<Vec<f64>, TrainError> {
        let k = self.k();
        if sample.refs.len() < k {
            return Err(TrainError::NoReferences);
        }
        let refs: Vec<&[f64]> = sample.refs[..k].iter().map(Vec::as_slice).collect();
        let mut tape = self.0.tape();
        let y = self.0.forward_values(&mut tape, masked_target, &refs)?;
        Ok(tape.value(y).data().to_vec())
    }
}

/// Fixed evaluation mask for one target window. Impute masks are keyed by
/// `(seed, series, start)` so they do not depend on set ordering, and the
/// rate is left out of the key so the masks of one window nest across rates.
pub fn eval_mask(task: Task, sample: &Sample, t: usize, v: usize, r: f64, seed: u64) -> Result<Mask, TrainError> {
    Ok(match task {
        Task::Forecast => make_forecast_mask(t, r, v)?,
        Task::Impute => make_impute_mask(t, v, r, mix_seed(&[seed, sample.series as u64, sample.start as u64]))?,
    })
}

/// Seed of the `draw`-th evaluation mask set. Draw 0 uses `seed` itself.
pub fn draw_seed(seed: u64, draw: usize) -> u64 {
    if draw == 0 {
        seed
    } else {
        mix_seed(&[seed, draw as u64])
    }
}

/// Forecast masks do not depend on the seed, so one draw covers them.
pub fn effective_draws(task: Task, draws: usize) -> usize {
    match task {
        Task::Forecast => 1,
        Task::Impute => draws.max(1),
    }
}

#[derive(Clone, Debug)]
pub struct EvalSpec {
    pub task: Task,
    pub setting: SplitMode,
    pub rates: Vec<f64>,
    pub seed: u64,
    /// Independent mask sets per window, pooled into one score.
    pub draws: usize,
    /// Report metrics in original units instead of normalized ones.
    pub denormalize: Option<NormStats>,
    pub exec: Exec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateMetrics {
    pub r: f64,
    pub rmse: f64,
    pub mae: f64,
    pub n_eval_points: usize,
    pub theory: TheoryReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub k: usize,
    pub task: Task,
    pub setting: SplitMode,
    pub seed: u64,
    /// Mask sets actually pooled; see [`draw_seed`].
    #[serde(default = "one")]
    pub draws: usize,
    pub normalized: bool,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub mae: f64,
    pub n_eval_points: usize,
    pub per_rate: Vec<RateMetrics>,
    pub theory: TheoryReport,
    pub meta: EvalMeta,
}

#[derive(Clone, Copy, Default)]
struct Sums {
    sse: f64,
    sae: f64,
    n: usize,
    zeros: usize,
}

impl Sums {
    fn add(&mut self, o: &Sums) {
        self.sse += o.sse;
        self.sae += o.sae;
        self.n += o.n;
        self.zeros += o.zeros;
    }

    fn metrics(&self) -> (f64, f64) {
        (((self.sse / self.n as f64).sqrt()), self.sae / self.n as f64)
    }
}

/// RMSE and MAE over masked-out entries only, per rate and pooled.
pub fn evaluate(p: &dyn Predictor, set: &SampleSet, spec: &EvalSpec) -> Result<EvalReport, TrainError> {
    if set.is_empty() || spec.rates.is_empty() {
        return Err(TrainError::EmptyEval);
    }
    let (t, v) = (set.t, set.v);
    let scale: Vec<f64> = match &spec.denormalize {
        Some(s) => s.std.clone(),
        None => vec![1.0; v],
    };
    let draws = effective_draws(spec.task, spec.draws);
    let jobs: Vec<(usize, &Sample)> = (0..draws).flat_map(|d| set.samples.iter().map(move |s| (d, s))).collect();
    let mut total = Sums::default();
    let mut per_rate = Vec::with_capacity(spec.rates.len());
    for &r in &spec.rates {
        let parts = spec.exec.try_map(&jobs, |&(draw, sample)| {
            let mask = eval_mask(spec.task, sample, t, v, r, draw_seed(spec.seed, draw))?;
            let masked: Vec<f64> = sample.truth.iter().zip(&mask.bits).map(|(x, &b)| if b { *x } else { 0.0 }).collect();
            let pred = p.predict(sample, &masked)?;
            let mut s = Sums { zeros: mask.missing_count(), ..Default::default() };
            for (i, (&bit, (y, x))) in mask.bits.iter().zip(pred.iter().zip(&sample.truth)).enumerate() {
                if !bit {
                    // the mean shift cancels in a residual
                    let e = (y - x) * scale[i % v];
                    s.sse += e * e;
                    s.sae += e.abs();
                    s.n += 1;
                }
            }
            Ok::<_, TrainError>(s)
        })?;
        let mut sums = Sums::default();
        for s in &parts {
            sums.add(s);
        }
        debug_assert_eq!(sums.n, sums.zeros);
        let (rmse, mae) = sums.metrics();
        per_rate.push(RateMetrics { r, rmse, mae, n_eval_points: sums.n, theory: TheoryReport::from_mse(sums.sse / sums.n as f64, v) });
        total.add(&sums);
    }
    let (rmse, mae) = total.metrics();
    Ok(EvalReport {
        rmse,
        mae,
        n_eval_points: total.n,
        per_rate,
        theory: TheoryReport::from_mse(total.sse / total.n as f64, v),
        meta: EvalMeta {
            k: p.k(),
            task: spec.task,
            setting: spec.setting,
            seed: spec.seed,
            draws,
            normalized: spec.denormalize.is_none(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Truth;
    impl Predictor for Truth {
        fn k(&self) -> usize {
            0
        }
        fn predict(&self, s: &Sample, _: &[f64]) -> Result<Vec<f64>, TrainError> {
            Ok(s.truth.clone())
        }
    }

    /// Truth plus a fixed offset pattern, with arbitrary values at observed entries.
    struct Offset(Vec<f64>, f64);
    impl Predictor for Offset {
        fn k(&self) -> usize {
            0
        }
        fn predict(&self, s: &Sample, masked: &[f64]) -> Result<Vec<f64>, TrainError> {
            Ok(s.truth
                .iter()
                .zip(&self.0)
                .zip(masked)
                .map(|((x, o), m)| if *m == 0.0 { x + o } else { x + o + self.1 })
                .collect())
        }
    }

    fn set_of(truths: Vec<Vec<f64>>, t: usize, v: usize) -> SampleSet {
        let samples = truths
            .into_iter()
            .enumerate()
            .map(|(i, truth)| Sample { series: i, start: 0, truth, refs: vec![], ref_series: vec![] })
            .collect();
        SampleSet { t, v, samples }
    }

    fn spec(task: Task, rates: Vec<f64>) -> EvalSpec {
        EvalSpec { task, setting: SplitMode::Single, rates, seed: 3, draws: 1, denormalize: None, exec: Exec::Sequential }
    }

    #[test]
    fn perfect_predictor_scores_zero() {
        let set = set_of(vec![vec![1.0, 2.0, 3.0, 4.0]; 3], 4, 1);
        let rep = evaluate(&Truth, &set, &spec(Task::Impute, vec![0.5])).unwrap();
        assert_eq!((rep.rmse, rep.mae, rep.n_eval_points), (0.0, 0.0, 6));
    }

    #[test]
    fn unit_residuals() {
        // forecast at r = 0.5 on T = 4 masks the last two steps
        let set = set_of(vec![vec![5.0, 5.0, 5.0, 5.0]], 4, 1);
        let p = Offset(vec![0.0, 0.0, 1.0, -1.0], 0.0);
        let rep = evaluate(&p, &set, &spec(Task::Forecast, vec![0.5])).unwrap();
        assert_eq!((rep.rmse, rep.mae, rep.n_eval_points), (1.0, 1.0, 2));
        assert_eq!(rep.theory.mse, 1.0);
    }

    #[test]
    fn denormalized_metrics_scale_by_std() {
        let set = set_of(vec![vec![5.0, 5.0, 5.0, 5.0]], 4, 1);
        let p = Offset(vec![0.0, 0.0, 1.0, -1.0], 0.0);
        let mut s = spec(Task::Forecast, vec![0.5]);
        s.denormalize = Some(NormStats { mean: vec![10.0], std: vec![3.0] });
        let rep = evaluate(&p, &set, &s).unwrap();
        assert_eq!((rep.rmse, rep.mae), (3.0, 3.0));
        assert!(!rep.meta.normalized);
    }

    #[test]
    fn draws_pool_independent_mask_sets() {
        let set = set_of(vec![(0..12).map(f64::from).collect(); 2], 12, 1);
        let p = Offset((0..12).map(|i| f64::from(i % 5) - 2.0).collect(), 0.0);
        let one = evaluate(&p, &set, &spec(Task::Impute, vec![0.25])).unwrap();
        let mut s = spec(Task::Impute, vec![0.25]);
        s.draws = 3;
        let three = evaluate(&p, &set, &s).unwrap();
        assert_eq!(three.n_eval_points, 3 * one.n_eval_points);
        assert_eq!(three.meta.draws, 3);
        // the first draw is the single-draw mask set
        assert_eq!(draw_seed(s.seed, 0), s.seed);
        s.task = Task::Forecast;
        assert_eq!(evaluate(&p, &set, &s).unwrap().meta.draws, 1);
    }

    #[test]
    fn empty_set_rejected() {
        assert!(matches!(evaluate(&Truth, &set_of(vec![], 4, 1), &spec(Task::Impute, vec![0.5])), Err(TrainError::EmptyEval)));
    }

    proptest! {
        #[test]
        fn observed_entries_never_count(values in proptest::collection::vec(-3.0f64..3.0, 24), junk in -50.0f64..50.0, r in 0.1f64..0.9, impute in any::<bool>()) {
            let set = set_of(vec![values.clone(), values.iter().map(|x| x * 2.0).collect()], 12, 2);
            let offs: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
            let task = if impute { Task::Impute } else { Task::Forecast };
            let s = spec(task, vec![r]);
            let (Ok(a), Ok(b)) = (evaluate(&Offset(offs.clone(), 0.0), &set, &s), evaluate(&Offset(offs, junk), &set, &s)) else {
                return Ok(());
            };
            prop_assert_eq!(&a, &b);
            let zeros: usize = set.samples.iter().map(|x| eval_mask(task, x, 12, 2, r, 3).unwrap().missing_count()).sum();
            prop_assert_eq!(a.n_eval_points, zeros);
        }
    }
}
