use serde::{Deserialize, Serialize};

use super::TrainError;

/// Gaussian error model of a completion: `sigma_hat = sqrt(mse)` and the
/// conditional entropy `delta = (v / 2)(1 + ln(2 pi sigma_hat^2))` in nats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub sigma_hat: f64,
    pub delta: f64,
    pub mse: f64,
    pub v: usize,
}

impl TheoryReport {
    /// A perfect fit (`mse = 0`) gives `delta = -inf`, the limit of the formula.
    pub fn from_mse(mse: f64, v: usize) -> Self {
        let sigma_hat = mse.sqrt();
        let delta = uncertainty_delta(sigma_hat, v).unwrap_or(f64::NEG_INFINITY);
        Self { sigma_hat, delta, mse, v }
    }
}

/// Root mean squared residual over all pairs.
pub fn estimate_sigma(preds: &[f64], truths: &[f64]) -> Result<f64, TrainError> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(TrainError::InvalidConfig(format!(
            "sigma needs equal, non-empty inputs ({} vs {})",
            preds.len(),
            truths.len()
        )));
    }
    let sse: f64 = preds.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / preds.len() as f64).sqrt())
}

pub fn uncertainty_delta(sigma: f64, v: usize) -> Result<f64, TrainError> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(TrainError::InvalidConfig(format!("sigma must be positive and finite, got {sigma}")));
    }
    Ok(v as f64 / 2.0 * (1.0 + (2.0 * std::f64::consts::PI * sigma * sigma).ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};
    use proptest::prelude::*;

    #[test]
    fn sigma_examples() {
        assert_eq!(estimate_sigma(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((estimate_sigma(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 3.5355339059327378).abs() < 1e-12);
        assert!(estimate_sigma(&[], &[]).is_err());
    }

    #[test]
    fn sigma_matches_tape_mse() {
        let p = vec![0.3, -1.2, 2.5, 0.0, 4.1];
        let t = vec![0.1, -1.0, 2.0, 0.7, 3.3];
        let mut tape = Tape::default();
        let a = tape.constant(Tensor::new(vec![5], p.clone()).unwrap());
        let b = tape.constant(Tensor::new(vec![5], t.clone()).unwrap());
        let mse = tape.mse(a, b).unwrap();
        assert!((estimate_sigma(&p, &t).unwrap() - tape.value(mse).item().sqrt()).abs() < 1e-15);
    }

    #[test]
    fn delta_examples() {
        assert!((uncertainty_delta(1.0, 1).unwrap() - 1.4189385332046727).abs() < 1e-12);
        assert_eq!(uncertainty_delta(1.3, 2).unwrap(), 2.0 * uncertainty_delta(1.3, 1).unwrap());
        assert!(uncertainty_delta(2.0, 1).unwrap() > uncertainty_delta(1.0, 1).unwrap());
        assert!(uncertainty_delta(0.0, 1).is_err());
        assert!(uncertainty_delta(-1.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn report_self_consistent(mse in 1e-6f64..1e3, v in 1usize..5) {
            let r = TheoryReport::from_mse(mse, v);
            prop_assert!((r.sigma_hat * r.sigma_hat - r.mse).abs() <= 1e-12 * mse.max(1.0));
            let expected = (v as f64 / 2.0) * (1.0 + (2.0 * std::f64::consts::PI * r.sigma_hat * r.sigma_hat).ln());
            prop_assert_eq!(r.delta, expected);
        }

        #[test]
        fn delta_monotone(a in 1e-4f64..1e2, b in 1e-4f64..1e2) {
            prop_assume!(a < b);
            prop_assert!(uncertainty_delta(a, 1).unwrap() < uncertainty_delta(b, 1).unwrap());
        }
    }
}
