use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, ParamGrads, Tensor};
use crate::data::{make_forecast_mask, make_impute_mask, Mask};
use crate::par::Exec;
use crate::synthesis::SynthesisModel;

use super::eval::{eval_mask, ModelPredictor, Predictor};
use super::samples::{Sample, SampleSet};
use super::{mix_seed, Task, TrainError};

/// Which entries the training loss averages over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    /// Every entry of the snippet, observed or not.
    Full,
    MaskedOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub task: Task,
    /// Missing rates drawn uniformly per sample and epoch for training masks;
    /// validation uses all of them with fixed masks.
    pub rates: Vec<f64>,
    pub loss: LossScope,
    /// Stop as soon as the epoch's training loss falls below this value.
    #[serde(default)]
    pub stop_below: Option<f64>,
    #[serde(default)]
    pub exec: Exec,
}

impl TrainConfig {
    pub fn new(task: Task, rates: Vec<f64>, seed: u64) -> Self {
        Self {
            lr: 1e-3,
            batch_size: 100,
            patience: 10,
            max_epochs: 200,
            seed,
            task,
            rates,
            loss: LossScope::Full,
            stop_below: None,
            exec: Exec::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {}", self.lr));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return bad("batch size, patience and max epochs must be at least 1".into());
        }
        if self.rates.is_empty() || self.rates.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return bad(format!("missing rates {:?} must lie in (0, 1)", self.rates));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once `patience` consecutive epochs fail to beat the best metric.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, stale: 0 }
    }

    pub fn update(&mut self, epoch: usize, metric: f64) -> StopDecision {
        if metric < self.best {
            self.best = metric;
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Masked-entry MSE on the validation set with fixed masks.
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters the model holds on return.
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub stopped_early: bool,
}

fn training_mask(cfg: &TrainConfig, sample: &Sample, t: usize, v: usize, epoch: usize) -> Result<Mask, TrainError> {
    let seed = mix_seed(&[cfg.seed, epoch as u64, sample.series as u64, sample.start as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = cfg.rates[rng.random_range(0..cfg.rates.len())];
    Ok(match cfg.task {
        Task::Forecast => make_forecast_mask(t, r, v)?,
        Task::Impute => make_impute_mask(t, v, r, rng.random())?,
    })
}

/// One sample's loss and parameter gradients.
fn sample_step(
    model: &SynthesisModel,
    cfg: &TrainConfig,
    sample: &Sample,
    t: usize,
    v: usize,
    epoch: usize,
) -> Result<(f64, ParamGrads), TrainError> {
    let mask = training_mask(cfg, sample, t, v, epoch)?;
    let masked = blank_unobserved(&sample.truth, &mask);
    let k = model.config().k;
    if sample.refs.len() < k {
        return Err(TrainError::NoReferences);
    }
    let refs: Vec<&[f64]> = sample.refs[..k].iter().map(Vec::as_slice).collect();
    let mut tape = model.tape();
    let y = model.forward_values(&mut tape, &masked, &refs)?;
    let truth = tape.constant(Tensor::new(vec![t, v], sample.truth.clone())?);
    let loss = match cfg.loss {
        LossScope::Full => tape.mse(y, truth)?,
        LossScope::MaskedOnly => tape.masked_mse(y, truth, mask.missing_weights())?,
    };
    let value = tape.value(loss).item();
    Ok((value, tape.backward(loss)?.params()))
}

fn blank_unobserved(truth: &[f64], mask: &Mask) -> Vec<f64> {
    truth.iter().zip(&mask.bits).map(|(x, &seen)| if seen { *x } else { 0.0 }).collect()
}

/// Masked-entry MSE on fixed validation masks. Each sample gets one mask,
/// with the rates assigned round-robin, so a pass costs one forward per sample.
pub(crate) fn validation_loss(model: &SynthesisModel, set: &SampleSet, cfg: &TrainConfig) -> Result<f64, TrainError> {
    let seed = mix_seed(&[cfg.seed, 0x0076_616c]);
    let predictor = ModelPredictor(model);
    let indexed: Vec<(usize, &Sample)> = set.samples.iter().enumerate().collect();
    let sums = cfg.exec.try_map(&indexed, |&(i, sample)| -> Result<(f64, usize), TrainError> {
        let r = cfg.rates[i % cfg.rates.len()];
        let mask = eval_mask(cfg.task, sample, set.t, set.v, r, seed)?;
        let masked = blank_unobserved(&sample.truth, &mask);
        let pred = predictor.predict(sample, &masked)?;
        let mut sse = 0.0;
        for ((p, x), &seen) in pred.iter().zip(&sample.truth).zip(&mask.bits) {
            if !seen {
                sse += (p - x) * (p - x);
            }
        }
        Ok((sse, mask.missing_count()))
    })?;
    let (sse, count) = sums.iter().fold((0.0, 0), |(a, n), (s, c)| (a + s, n + c));
    if count == 0 {
        return Err(TrainError::EmptyEval);
    }
    Ok(sse / count as f64)
}

/// Mini-batch Adam on fresh training masks each epoch, early-stopped on the
/// validation set when one is given. The model ends at its best epoch.
pub fn train(
    model: &mut SynthesisModel,
    train_set: &SampleSet,
    val_set: Option<&SampleSet>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::InvalidConfig("empty training set".into()));
    }
    if (train_set.t, train_set.v) != (model.config().t, model.config().v) {
        return Err(TrainError::InvalidConfig(format!(
            "samples are {}x{}, model expects {}x{}",
            train_set.t,
            train_set.v,
            model.config().t,
            model.config().v
        )));
    }
    let (t, v) = (train_set.t, train_set.v);
    let mut adam = Adam::new(cfg.lr, model.params());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.params().clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopped_early = false;
    let mut epoch = 0;
    while epoch < cfg.max_epochs {
        epoch += 1;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, epoch as u64])));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<&Sample> = batch.iter().map(|&i| &train_set.samples[i]).collect();
            let results = cfg.exec.try_map(&samples, |s| sample_step(model, cfg, s, t, v, epoch))?;
            let mut grads = ParamGrads::empty(model.params().len());
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(TrainError::Diverged { epoch, loss: *loss });
                }
                loss_sum += loss;
                grads.add_assign(g);
            }
            let store = model.params_mut();
            store.zero_grad();
            store.accumulate(&grads, 1.0 / batch.len() as f64);
            adam.step(store)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = val_set.map(|vs| validation_loss(model, vs, cfg)).transpose()?;
        history.push(EpochRecord { epoch, train_loss, val_loss });
        let tracked = val_loss.unwrap_or(train_loss);
        if !tracked.is_finite() {
            return Err(TrainError::Diverged { epoch, loss: tracked });
        }
        match stopper.update(epoch, tracked) {
            StopDecision::Improved => best_params = model.params().clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
        if cfg.stop_below.is_some_and(|b| train_loss < b) {
            break;
        }
    }
    model.params_mut().load_values_from(&best_params);
    model.params_mut().zero_grad();
    log::debug!("trained {epoch} epochs, best {} at {}", stopper.best, stopper.best_epoch);
    Ok(TrainOutcome { history, best_epoch: stopper.best_epoch, stopped_epoch: epoch, stopped_early })
}
