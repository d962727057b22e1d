//! Seeded networked dataset: a ring of series split into contiguous
//! communities, each sharing a seasonal signal whose level, amplitudes and
//! phases wander slowly. Related series therefore carry information
//! a series' own history cannot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{DatasetMeta, TimeSeriesDB};
use crate::graph::RelationGraph;

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub t_prime: usize,
    pub period: usize,
    /// Standard deviation of the i.i.d. Gaussian noise.
    pub noise: f64,
    pub seed: u64,
    pub v: usize,
    /// Consecutive ring nodes sharing one seasonal shape.
    pub community_size: usize,
    /// Each node lags its community shape by `0..=max_shift` steps.
    pub max_shift: usize,
    /// Per-period innovation std of the AR(1) walk of the seasonal
    /// parameters. Zero gives a strictly periodic signal.
    pub drift: f64,
    /// Stationary std of a per-node AR(1) deviation that neighbours do not
    /// share; only the series' own recent past reveals it.
    pub idiosyncratic: f64,
}

impl SynthSpec {
    pub fn new(n: usize, t_prime: usize, period: usize, seed: u64) -> Self {
        Self { n, t_prime, period, noise: 0.1, seed, v: 1, community_size: 8, max_shift: 2, drift: 0.3, idiosyncratic: 0.3 }
    }

    /// The dataset behind the desk-scale experiments.
    pub fn desk(seed: u64) -> Self {
        Self { noise: 0.2, community_size: 16, max_shift: 0, drift: 0.3, idiosyncratic: 0.4, ..Self::new(48, 288, 24, seed) }
    }
}

const HARMONICS: usize = 3;
/// Persistence of the seasonal parameters over one full period.
const RHO: f64 = 0.8;
/// Step-to-step persistence of the per-node deviation.
const PHI: f64 = 0.95;

/// Seasonal parameters: level, then (log amplitude, phase) per harmonic.
#[derive(Clone, Copy)]
struct Season {
    level: f64,
    harmonics: [(f64, f64); HARMONICS],
}

impl Season {
    fn eval(&self, phase: f64) -> f64 {
        self.level
            + self.harmonics.iter().enumerate().map(|(h, (la, p))| la.exp() * ((h + 1) as f64 * phase + p).sin()).sum::<f64>()
    }
}

/// Per-step seasonal parameters of one community variate. Each parameter is
/// a mean-reverting AR(1) around a random base whose innovations are scaled
/// so that one period of steps matches persistence `RHO` and a per-period
/// innovation std of `drift`.
fn season_walk(rng: &mut ChaCha8Rng, steps: usize, period: usize, drift: f64) -> Vec<Season> {
    let mut base = Season { level: rng.random_range(-1.0..1.0), harmonics: [(0.0, 0.0); HARMONICS] };
    for (i, slot) in base.harmonics.iter_mut().enumerate() {
        *slot = ((rng.random_range(0.5..1.5) / (i + 1) as f64).ln(), rng.random_range(0.0..std::f64::consts::TAU));
    }
    let rho = RHO.powf(1.0 / period as f64);
    let step_std = drift * ((1.0 - rho * rho) / (1.0 - RHO * RHO)).sqrt();
    let innov = Normal::new(0.0, step_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let draw = |rng: &mut ChaCha8Rng, scale: f64| if drift > 0.0 { scale * innov.sample(rng) } else { 0.0 };
    let revert = |b: f64, x: f64| b + rho * (x - b);
    let mut cur = base;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        out.push(cur);
        cur.level = revert(base.level, cur.level) + draw(rng, 1.0);
        for (c, b) in cur.harmonics.iter_mut().zip(&base.harmonics) {
            // amplitudes walk in log space so they stay positive
            *c = (revert(b.0, c.0) + draw(rng, 0.5), revert(b.1, c.1) + draw(rng, 1.0));
        }
    }
    out
}

pub fn synth_data_gen(spec: &SynthSpec) -> Result<TimeSeriesDB, TrainError> {
    let SynthSpec { n, t_prime, period, noise, seed, v, community_size, max_shift, drift, idiosyncratic } = *spec;
    if n == 0 || t_prime == 0 || v == 0 || period == 0 || community_size == 0 {
        return Err(TrainError::InvalidConfig("n, t_prime, period, v and community size must be positive".into()));
    }
    if period > t_prime {
        return Err(TrainError::InvalidConfig(format!("period {period} exceeds series length {t_prime}")));
    }
    for (name, x) in [("noise", noise), ("drift", drift), ("idiosyncratic", idiosyncratic)] {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("{name} {x} must be a finite non-negative std")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let communities = n.div_ceil(community_size);
    // community time covers the shifted range [-max_shift, t_prime)
    let steps = t_prime + max_shift;
    let walks: Vec<Vec<Vec<Season>>> =
        (0..communities).map(|_| (0..v).map(|_| season_walk(&mut rng, steps, period, drift)).collect()).collect();
    let shifts: Vec<usize> = (0..n).map(|_| rng.random_range(0..=max_shift)).collect();
    let gauss = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let idio_step = Normal::new(0.0, (idiosyncratic * (1.0 - PHI * PHI).sqrt()).max(f64::MIN_POSITIVE)).expect("valid std");
    let mut values = Vec::with_capacity(n * t_prime * v);
    for (i, &shift) in shifts.iter().enumerate() {
        let community = &walks[i / community_size];
        let mut dev = vec![0.0; v];
        if idiosyncratic > 0.0 {
            let start = Normal::new(0.0, idiosyncratic).expect("valid std");
            dev.iter_mut().for_each(|d| *d = start.sample(&mut rng));
        }
        for t in 0..t_prime {
            // community time, offset so it stays non-negative
            let u = t + max_shift - shift;
            let phase = std::f64::consts::TAU * (u % period) as f64 / period as f64;
            for (walk, d) in community.iter().zip(dev.iter_mut()) {
                let clean = walk[u].eval(phase);
                if idiosyncratic > 0.0 && t > 0 {
                    *d = PHI * *d + idio_step.sample(&mut rng);
                }
                let eps = if noise > 0.0 { gauss.sample(&mut rng) } else { 0.0 };
                values.push(clean + *d + eps);
            }
        }
    }
    let meta = DatasetMeta { n, t_prime, v, start_time: 0, step_unit: "hour".into(), period };
    let ids = (0..n).map(|i| format!("s{i}")).collect();
    Ok(TimeSeriesDB::new(meta, ids, values, RelationGraph::ring(n))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let s = SynthSpec::new(12, 96, 24, 7);
        assert_eq!(synth_data_gen(&s).unwrap().values(), synth_data_gen(&s).unwrap().values());
        let other = SynthSpec { seed: 8, ..s };
        assert_ne!(synth_data_gen(&other).unwrap().values(), synth_data_gen(&SynthSpec::new(12, 96, 24, 7)).unwrap().values());
    }

    #[test]
    fn ring_graph_degrees() {
        let db = synth_data_gen(&SynthSpec::new(20, 48, 24, 1)).unwrap();
        let g = db.graph();
        for i in 0..20 {
            assert_eq!(g.degree(i), 2);
            for &j in g.neighbors(i) {
                assert!(g.has_edge(j, i));
            }
        }
    }

    #[test]
    fn noiseless_community_members_are_shifted_copies() {
        let spec = SynthSpec { noise: 0.0, idiosyncratic: 0.0, ..SynthSpec::new(8, 96, 24, 3) };
        let db = synth_data_gen(&spec).unwrap();
        let a = db.series(0);
        for i in 1..8 {
            let b = db.series(i);
            let matched = (-2i64..=2).any(|d| (10..80).all(|t: i64| (b[t as usize] - a[(t - d) as usize]).abs() < 1e-12));
            assert!(matched, "series {i} is not a shifted copy of series 0");
        }
    }

    #[test]
    fn autocorrelation_peaks_at_period() {
        let spec = SynthSpec { noise: 0.3, ..SynthSpec::new(6, 240, 24, 11) };
        let db = synth_data_gen(&spec).unwrap();
        for s in 0..6 {
            let x = db.series(s);
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let acf = |lag: usize| -> f64 {
                let n = x.len() - lag;
                (0..n).map(|t| (x[t] - mean) * (x[t + lag] - mean)).sum::<f64>() / n as f64
            };
            let best = (2..=36).max_by(|&a, &b| acf(a).total_cmp(&acf(b))).unwrap();
            assert_eq!(best, 24, "series {s}");
        }
    }

    #[test]
    fn invalid_dimensions() {
        assert!(synth_data_gen(&SynthSpec::new(4, 96, 200, 0)).is_err());
        assert!(synth_data_gen(&SynthSpec::new(0, 96, 24, 0)).is_err());
    }
}
