use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use super::{Adam, MetricAccumulator, MetricReport};
use crate::autodiff::{Tape, Unary, Var};
use crate::data::{Standardizer, WindowPair};
use crate::error::{Error, Result, StageExt};
use crate::model::{Mode, ModelState};
use crate::params::ParamStore;
use crate::rng::{stream_id, RngStream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossKind {
    #[default]
    Mae,
    Huber,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mae => "mae",
            LossKind::Huber => "huber",
        })
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mae" => Ok(LossKind::Mae),
            "huber" => Ok(LossKind::Huber),
            other => Err(format!("expected `mae` or `huber`, got `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: usize,
    pub lr_decay: f64,
    /// Non-improving epochs before the learning rate is multiplied by `lr_decay`.
    pub lr_patience: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub huber_delta: f64,
    pub mape_threshold: f64,
    /// Run the schedule without applying updates.
    pub freeze: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch: 16,
            patience: 30,
            max_epochs: 200,
            max_steps: 0,
            lr_decay: 0.5,
            lr_patience: 10,
            seed: 0,
            loss: LossKind::Mae,
            huber_delta: 1.0,
            mape_threshold: super::MAPE_THRESHOLD,
            freeze: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", format!("{} must be positive", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(Error::config("lr_decay", format!("{} is not in (0, 1)", self.lr_decay)));
        }
        for (key, v) in [
            ("batch", self.batch),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("lr_patience", self.lr_patience),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::config("huber_delta", format!("{} must be positive", self.huber_delta)));
        }
        if !(self.mape_threshold >= 0.0) {
            return Err(Error::config("mape_threshold", format!("{} is negative", self.mape_threshold)));
        }
        Ok(())
    }
}

/// Maps standardized values back to original units on the tape.
pub fn destandardize_var(tape: &mut Tape<f32>, v: Var, stats: &Standardizer) -> Result<Var> {
    let scale = tape.constant(Tensor::from_f64(&[stats.features()], &stats.std)?);
    let shift = tape.constant(Tensor::from_f64(&[stats.features()], &stats.mean)?);
    let scaled = tape.mul(v, scale)?;
    tape.add(scaled, shift)
}

/// Mean elementwise MAE or Huber penalty between `pred` and a constant target.
pub fn loss<T: crate::tensor::Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    truth: &Tensor<T>,
    kind: LossKind,
    huber_delta: f64,
) -> Result<Var> {
    let y = tape.constant(truth.clone());
    let diff = tape.sub(pred, y)?;
    let pen = match kind {
        LossKind::Mae => tape.abs(diff),
        LossKind::Huber => tape.unary(diff, Unary::Huber(T::of(huber_delta))),
    };
    Ok(tape.mean(pen))
}

/// Standardized history for the model.
pub fn model_input(window: &WindowPair, stats: &Standardizer) -> Result<Tensor<f32>> {
    stats.apply(&window.history)
}

/// Eval-mode forecast in original units.
pub fn predict_window(model: &ModelState<f32>, window: &WindowPair, stats: &Standardizer) -> Result<Tensor<f32>> {
    let x = model_input(window, stats)?;
    let y = model.predict(&x, &window.history_dow, &window.history_tod)?;
    stats.invert(&y)
}

/// Metrics of the model over `windows`, overall and per horizon.
pub fn evaluate(
    model: &ModelState<f32>,
    windows: &[WindowPair],
    stats: &Standardizer,
    mape_threshold: f64,
) -> Result<MetricReport> {
    let start = Instant::now();
    let mut acc = MetricAccumulator::new(model.config.z, mape_threshold);
    for w in windows {
        acc.add(&predict_window(model, w, stats)?, &w.target)?;
    }
    Ok(acc.finish(start.elapsed().as_secs_f64()))
}

/// Persistence baseline: every horizon repeats the last observed step.
pub fn historical_index(windows: &[WindowPair], mape_threshold: f64) -> Result<MetricReport> {
    let start = Instant::now();
    let z = windows.first().map_or(1, |w| w.target.shape()[0]);
    let mut acc = MetricAccumulator::new(z, mape_threshold);
    for w in windows {
        let (h, n, d) = (w.history.shape()[0], w.history.shape()[1], w.history.shape()[2]);
        let last = &w.history.data()[(h - 1) * n * d..];
        let pred = Tensor::from_fn(w.target.shape(), |i| last[i % (n * d)]);
        acc.add(&pred, &w.target)?;
    }
    Ok(acc.finish(start.elapsed().as_secs_f64()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
    MaxSteps,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation MAE.
    pub best: ParamStore<f32>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
    pub stop: StopReason,
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch\ttrain_loss\tval_mae\tlr\tseconds\n");
    for r in history {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:e}\t{:.3}\n",
            r.epoch, r.train_loss, r.val_mae, r.lr, r.seconds
        ));
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loss and per-parameter gradients for one window.
fn sample_gradients(
    model: &ModelState<f32>,
    window: &WindowPair,
    stats: &Standardizer,
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut tape = Tape::new();
    let p = model.store.bind(&mut tape);
    let x = tape.constant(model_input(window, stats)?);
    let y = model.forward(&mut tape, &p, x, &window.history_dow, &window.history_tod, Mode::Train(rng))?;
    let y = destandardize_var(&mut tape, y, stats)?;
    let l = loss(&mut tape, y, &window.target, cfg.loss, cfg.huber_delta)?;
    let value = tape.value(l).item() as f64;
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite training loss".into()));
    }
    let grads = tape.backward(l)?;
    Ok((value, p.collect(&tape, &grads)))
}

/// Mini-batch Adam with per-epoch shuffling, validation-based early stopping
/// and step-wise learning-rate decay. `model` ends at the best parameters.
pub fn train_loop(
    model: &mut ModelState<f32>,
    train: &[WindowPair],
    val: &[WindowPair],
    stats: &Standardizer,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let mut adam = Adam::new(&model.store);
    let mut lr = cfg.lr;
    let mut best = model.store.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut since_decay = 0;
    let mut steps = 0;
    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        RngStream::new(cfg.seed, stream_id(&[epoch as u64, 0])).shuffle(&mut order);
        let mut dropout_rng = RngStream::new(cfg.seed, stream_id(&[epoch as u64, 1]));
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for batch in order.chunks(cfg.batch) {
            let stage = format!("epoch {epoch} step {}", steps + 1);
            let mut total: Option<Vec<Tensor<f32>>> = None;
            for &i in batch {
                let (l, g) = sample_gradients(model, &train[i], stats, cfg, &mut dropout_rng).stage(&stage)?;
                loss_sum += l;
                loss_n += 1;
                match total.as_mut() {
                    None => total = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.add_assign(b);
                        }
                    }
                }
            }
            let mut grads = total.expect("batch is non-empty");
            let inv = 1.0 / batch.len() as f32;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            if !cfg.freeze {
                adam.step(&mut model.store, &grads, lr).stage(&stage)?;
            }
            steps += 1;
            if cfg.max_steps > 0 && steps >= cfg.max_steps {
                stop = StopReason::MaxSteps;
                let rec = finish_epoch(model, val, stats, cfg, epoch, loss_sum / loss_n as f64, lr, started)?;
                track(&rec, model, &mut best, &mut best_val, &mut best_epoch);
                history.push(rec);
                break 'epochs;
            }
        }
        let rec = finish_epoch(model, val, stats, cfg, epoch, loss_sum / loss_n as f64, lr, started)?;
        let improved = track(&rec, model, &mut best, &mut best_val, &mut best_epoch);
        history.push(rec);
        if improved {
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_best >= cfg.patience {
                stop = StopReason::Patience;
                break;
            }
            if since_decay >= cfg.lr_patience {
                lr *= cfg.lr_decay;
                since_decay = 0;
            }
        }
    }
    model.store = best.clone();
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_mae: best_val,
        history,
        steps,
        stop,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish_epoch(
    model: &ModelState<f32>,
    val: &[WindowPair],
    stats: &Standardizer,
    cfg: &TrainConfig,
    epoch: usize,
    train_loss: f64,
    lr: f64,
    started: Instant,
) -> Result<EpochRecord> {
    let report = evaluate(model, val, stats, cfg.mape_threshold).stage(&format!("epoch {epoch} validation"))?;
    Ok(EpochRecord {
        epoch,
        train_loss,
        val_mae: report.mae,
        lr,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn track(
    rec: &EpochRecord,
    model: &ModelState<f32>,
    best: &mut ParamStore<f32>,
    best_val: &mut f64,
    best_epoch: &mut usize,
) -> bool {
    if rec.val_mae < *best_val {
        *best_val = rec.val_mae;
        *best_epoch = rec.epoch;
        *best = model.store.clone();
        true
    } else {
        false
    }
}
