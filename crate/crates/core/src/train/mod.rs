//! End-to-end fitting of the shared MPC parameters to labelled slippage
//! openings.

mod gradcheck;
mod optim;

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_TOL};
pub use optim::{make_optimizer, Adam, Optimizer, RmsProp, OPTIMIZERS};

use crate::error::{check_len, Error, Result};
use crate::lifting::GripperState;
use crate::mpc::{save_checkpoint, MpcConfig, MpcInput, MpcParams, OutputGradient, PreparedLayer, TiePolicy};
use crate::tactile::TrialRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Terminal scaling; the terminal error is weighted by its square.
    pub terminal_scale: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: String,
    pub seed: u64,
    /// Fraction of trials held out for validation.
    pub holdout_fraction: f64,
    /// Use every k-th frame of a sub-trial as a sample.
    pub frame_stride: usize,
    /// Train the single-agent baseline: coupling terms stay at zero.
    pub single_agent: bool,
    /// Abort when more than this fraction of a batch fails to solve.
    pub failure_budget: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            terminal_scale: 3.0,
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: "rmsprop".into(),
            seed: 0,
            holdout_fraction: 0.1,
            frame_stride: 4,
            single_agent: false,
            failure_budget: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.terminal_scale > 0.0) {
            return Err(Error::Config("terminal scale must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.frame_stride == 0 {
            return Err(Error::Config("epochs, batch size and frame stride must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout fraction must be in [0, 1)".into()));
        }
        if !(self.failure_budget >= 0.0) {
            return Err(Error::Config("failure budget must be non-negative".into()));
        }
        if !OPTIMIZERS.contains(&self.optimizer.as_str()) {
            return Err(Error::UnknownStrategy {
                kind: "optimizer",
                name: self.optimizer.clone(),
            });
        }
        Ok(())
    }
}

/// Reference openings for one sample: the label repeated over the horizon
/// and the terminal value, per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub trajectories: [DVector<f64>; 2],
    pub terminal: [f64; 2],
}

impl Targets {
    pub fn constant(horizon: usize, labels: [f64; 2]) -> Self {
        Self {
            trajectories: labels.map(|y| DVector::from_element(horizon, y)),
            terminal: labels,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub input: MpcInput,
    pub targets: Targets,
    pub trial_id: usize,
}

/// A batch in fixed sample order.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub samples: &'a [Sample],
}

fn mse(pred: &DVector<f64>, target: &DVector<f64>) -> f64 {
    (pred - target).norm_squared() / pred.len() as f64
}

fn check_shapes(pred: &[DVector<f64>; 2], targets: &Targets) -> Result<()> {
    for i in 0..2 {
        check_len("predicted trajectory", targets.trajectories[i].len(), pred[i].len())?;
        if pred[i].is_empty() {
            return Err(Error::DimensionMismatch {
                what: "predicted trajectory",
                expected: 1,
                got: 0,
            });
        }
    }
    Ok(())
}

/// Trajectory MSE per agent plus the squared terminal error scaled by `S²`.
pub fn loss(pred: &[DVector<f64>; 2], targets: &Targets, terminal_scale: f64) -> Result<f64> {
    check_shapes(pred, targets)?;
    let s2 = terminal_scale * terminal_scale;
    Ok((0..2)
        .map(|i| {
            let last = pred[i][pred[i].len() - 1];
            mse(&pred[i], &targets.trajectories[i]) + s2 * (last - targets.terminal[i]).powi(2)
        })
        .sum())
}

pub fn loss_gradient(pred: &[DVector<f64>; 2], targets: &Targets, terminal_scale: f64) -> Result<[DVector<f64>; 2]> {
    check_shapes(pred, targets)?;
    let s2 = terminal_scale * terminal_scale;
    Ok(std::array::from_fn(|i| {
        let n = pred[i].len();
        let mut g = (&pred[i] - &targets.trajectories[i]) * (2.0 / n as f64);
        g[n - 1] += 2.0 * s2 * (pred[i][n - 1] - targets.terminal[i]);
        g
    }))
}

/// Turns sub-trials into training samples: the observed state at a frame
/// and the labelled slippage opening as the target for both grippers.
pub fn samples_from_records(
    records: &[TrialRecord],
    frame_interval: f64,
    horizon: usize,
    frame_stride: usize,
) -> Vec<Sample> {
    let stride = frame_stride.max(1);
    let mut out = Vec::new();
    for r in records {
        let vel = r.velocities(frame_interval);
        for (k, frame) in r.frames.iter().enumerate().step_by(stride) {
            out.push(Sample {
                input: MpcInput {
                    states: std::array::from_fn(|i| GripperState::new(frame.openings[i], vel[k][i])),
                    embeddings: std::array::from_fn(|i| frame.embeddings[i].map(f64::from)),
                },
                targets: Targets::constant(horizon, [r.slippage_opening; 2]),
                trial_id: r.trial_id,
            });
        }
    }
    out
}

/// Seeded trial-level split; returns (train, held-out) trial ids.
pub fn split_trials(records: &[TrialRecord], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = records.iter().map(|r| r.trial_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5911_7000);
    ids.shuffle(&mut rng);
    let held = ((ids.len() as f64 * fraction).round() as usize).min(ids.len().saturating_sub(1));
    let mut val = ids[..held].to_vec();
    let mut train = ids[held..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

enum SampleOutcome {
    Used { loss: f64, grad: Vec<f64> },
    Failed,
    Degenerate,
}

fn sample_gradient(layer: &PreparedLayer, sample: &Sample, terminal_scale: f64) -> Result<SampleOutcome> {
    let out = match layer.forward(&sample.input, None) {
        Ok(o) => o,
        Err(Error::SolverFailed { .. }) => return Ok(SampleOutcome::Failed),
        Err(e) => return Err(e),
    };
    let l = loss(&out.predicted_openings, &sample.targets, terminal_scale)?;
    let grad = OutputGradient {
        openings: loss_gradient(&out.predicted_openings, &sample.targets, terminal_scale)?,
        a_star: [0.0; 2],
    };
    match layer.backward(&sample.input, &out, &grad, TiePolicy::Reject) {
        Ok(g) => Ok(SampleOutcome::Used {
            loss: l,
            grad: g.params.to_flat(),
        }),
        Err(Error::DegenerateActiveSet { .. }) => Ok(SampleOutcome::Degenerate),
        Err(Error::SolverFailed { .. }) => Ok(SampleOutcome::Failed),
        Err(e) => Err(e),
    }
}

/// Mean loss and flat parameter gradient over the usable samples of a
/// batch. Per-sample work runs in parallel; the reduction is in sample
/// order.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub used: usize,
    pub failed: usize,
    pub degenerate: usize,
}

pub fn batch_gradient(layer: &PreparedLayer, batch: Batch<'_>, terminal_scale: f64) -> Result<BatchGradient> {
    let outcomes: Vec<Result<SampleOutcome>> = batch
        .samples
        .par_iter()
        .map(|s| sample_gradient(layer, s, terminal_scale))
        .collect();
    let dim = layer.params().num_values();
    let mut acc = BatchGradient {
        loss: 0.0,
        grad: vec![0.0; dim],
        used: 0,
        failed: 0,
        degenerate: 0,
    };
    for o in outcomes {
        match o? {
            SampleOutcome::Used { loss, grad } => {
                acc.loss += loss;
                for (a, g) in acc.grad.iter_mut().zip(&grad) {
                    *a += g;
                }
                acc.used += 1;
            }
            SampleOutcome::Failed => acc.failed += 1,
            SampleOutcome::Degenerate => acc.degenerate += 1,
        }
    }
    if acc.used > 0 {
        let n = acc.used as f64;
        acc.loss /= n;
        acc.grad.iter_mut().for_each(|g| *g /= n);
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    /// Mean trajectory MSE per agent.
    pub trajectory_mse: f64,
    /// Mean squared terminal error per agent (unscaled).
    pub terminal_mse: f64,
    /// Median |terminal prediction − label| over agents and samples (mm).
    pub median_terminal_error: f64,
    pub evaluated: usize,
    pub failed: usize,
}

pub fn evaluate(params: &MpcParams, mpc: &MpcConfig, samples: &[Sample], terminal_scale: f64) -> Result<Evaluation> {
    let layer = PreparedLayer::new(params, mpc)?;
    let outs: Vec<Result<Option<[DVector<f64>; 2]>>> = samples
        .par_iter()
        .map(|s| match layer.forward(&s.input, None) {
            Ok(o) => Ok(Some(o.predicted_openings)),
            Err(Error::SolverFailed { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut ev = Evaluation {
        loss: 0.0,
        trajectory_mse: 0.0,
        terminal_mse: 0.0,
        median_terminal_error: 0.0,
        evaluated: 0,
        failed: 0,
    };
    let mut errors = Vec::new();
    for (s, o) in samples.iter().zip(outs) {
        let Some(pred) = o? else {
            ev.failed += 1;
            continue;
        };
        ev.loss += loss(&pred, &s.targets, terminal_scale)?;
        for i in 0..2 {
            let n = pred[i].len();
            let e = pred[i][n - 1] - s.targets.terminal[i];
            ev.trajectory_mse += mse(&pred[i], &s.targets.trajectories[i]) / 2.0;
            ev.terminal_mse += e * e / 2.0;
            errors.push(e.abs());
        }
        ev.evaluated += 1;
    }
    if ev.evaluated > 0 {
        let n = ev.evaluated as f64;
        ev.loss /= n;
        ev.trajectory_mse /= n;
        ev.terminal_mse /= n;
        errors.sort_by(f64::total_cmp);
        ev.median_terminal_error = median_sorted(&errors);
    }
    Ok(ev)
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub failed: usize,
    pub degenerate: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MpcParams,
    pub history: Vec<EpochStats>,
    pub train_trials: Vec<usize>,
    pub val_trials: Vec<usize>,
    /// Held-out evaluation of the final parameters.
    pub validation: Evaluation,
}

/// Trailing-window mean of the training loss.
pub fn smoothed_losses(history: &[EpochStats], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..history.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            let s = &history[lo..=i];
            s.iter().map(|e| e.train_loss).sum::<f64>() / s.len() as f64
        })
        .collect()
}

fn apply_mask(grad: &mut [f64], m: usize, single_agent: bool) {
    if single_agent {
        // flat layout: a_f, c_f, ..., alpha
        grad[m..2 * m].fill(0.0);
        let last = grad.len() - 1;
        grad[last] = 0.0;
    }
}

pub fn train(
    records: &[TrialRecord],
    frame_interval: f64,
    cfg: &TrainConfig,
    mpc: &MpcConfig,
    init: &MpcParams,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    mpc.validate()?;
    if records.is_empty() {
        return Err(Error::Config("training needs a non-empty dataset".into()));
    }
    let m = mpc.embed_dim;
    let mut params = if cfg.single_agent { init.decoupled() } else { init.clone() };
    params.project_lower();
    // also checks shapes and that the penalty assembles
    PreparedLayer::new(&params, mpc)?;

    let (train_trials, val_trials) = split_trials(records, cfg.holdout_fraction, cfg.seed);
    let all = samples_from_records(records, frame_interval, mpc.horizon, cfg.frame_stride);
    let (train_set, val_set): (Vec<Sample>, Vec<Sample>) =
        all.into_iter().partition(|s| train_trials.binary_search(&s.trial_id).is_ok());
    if train_set.is_empty() {
        return Err(Error::Config("no training samples after the split".into()));
    }
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut flat = params.to_flat();
    let mut opt = make_optimizer(&cfg.optimizer, cfg.learning_rate, flat.len())?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut used = 0;
        let (mut failed, mut degenerate) = (0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let layer = PreparedLayer::new(&params, mpc)?;
            let bg = batch_gradient(&layer, Batch { samples: &batch }, cfg.terminal_scale)?;
            if bg.failed as f64 > cfg.failure_budget * batch.len() as f64 {
                return Err(Error::FailureBudget {
                    failed: bg.failed,
                    batch: batch.len(),
                });
            }
            failed += bg.failed;
            degenerate += bg.degenerate;
            if bg.used == 0 {
                continue;
            }
            loss_sum += bg.loss * bg.used as f64;
            used += bg.used;
            let mut grad = bg.grad;
            apply_mask(&mut grad, m, cfg.single_agent);
            opt.step(&mut flat, &grad)?;
            params = MpcParams::from_flat(m, &flat)?;
        }
        let val_loss = if val_set.is_empty() {
            f64::NAN
        } else {
            evaluate(&params, mpc, &val_set, cfg.terminal_scale)?.loss
        };
        let stats = EpochStats {
            epoch,
            train_loss: if used > 0 { loss_sum / used as f64 } else { f64::NAN },
            val_loss,
            failed,
            degenerate,
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} (failed {failed}, degenerate {degenerate})",
            stats.train_loss,
            stats.val_loss
        );
        history.push(stats);
        if let Some(dir) = checkpoint_dir {
            save_checkpoint(&dir.join(format!("epoch_{epoch:03}.json")), &params, mpc)?;
        }
    }
    let validation = evaluate(&params, mpc, &val_set, cfg.terminal_scale)?;
    Ok(TrainOutcome {
        params,
        history,
        train_trials,
        val_trials,
        validation,
    })
}

pub fn write_history_csv<W: Write>(out: W, history: &[EpochStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "val_loss"]).map_err(Error::csv)?;
    for e in history {
        w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.val_loss.to_string()])
            .map_err(Error::csv)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
