//! The joint training stage: seeded minibatch SGD with momentum over the
//! full multi-expert objective, optionally supervised by a frozen teacher
//! ensemble.

use alloc::format;
use alloc::vec::Vec;

use crate::data::LabeledDataset;
use crate::distill::{kd_term, DistillConfig};
use crate::error::{CoreError, Result};
use crate::experts::{build_model, ModelConfig, RideModel};
use crate::grid::ValueGrid;
use crate::losses::{total_loss, LossConfig, TemperatureSchedule};
use crate::net::{sgd_momentum_step, LrSchedule, OptimState};
use crate::router::shuffle;
use crate::seed;

pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Optimization settings for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub momentum: f64,
    /// Drives the per-epoch shuffles; independent of the model-init seed.
    pub seed: u64,
}

/// Mean loss values over one epoch, weighted by batch size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub classify: f64,
    pub diversity: f64,
    pub distill: f64,
}

fn stamp(epoch: usize, batch: usize) -> impl Fn(CoreError) -> CoreError {
    move |e| match e {
        CoreError::Numeric(msg) => {
            CoreError::Numeric(format!("epoch {epoch} batch {batch}: {msg}"))
        }
        other => other,
    }
}

fn gather_rows(grid: &ValueGrid, indices: &[usize]) -> Result<ValueGrid> {
    let mut data = Vec::with_capacity(indices.len() * grid.cols());
    for &i in indices {
        data.extend_from_slice(grid.row(i));
    }
    ValueGrid::matrix(indices.len(), grid.cols(), data)
}

/// Trains a fresh model on `data` under the full objective.
///
/// Per epoch the margins, re-weighting, and diversity activation are
/// re-resolved, the instance order is reshuffled from the training seed, and
/// every minibatch takes one momentum-SGD step. A teacher, when present with
/// a positive weight, adds its distillation term to every batch; at weight
/// zero the distillation code path is skipped entirely, so such a run is
/// bit-identical to an unsupervised one.
pub fn train_stage1(
    model_cfg: &ModelConfig,
    data: &LabeledDataset,
    loss_cfg: &LossConfig,
    temps: &TemperatureSchedule,
    train_cfg: &TrainConfig,
    teacher: Option<(&RideModel, &DistillConfig)>,
) -> Result<(RideModel, Vec<EpochMetrics>)> {
    if train_cfg.batch_size == 0 {
        return Err(CoreError::Config("batch size must be positive".into()));
    }
    if !(0.0..1.0).contains(&train_cfg.momentum) {
        return Err(CoreError::Config(format!(
            "momentum must lie in [0, 1), got {}",
            train_cfg.momentum
        )));
    }
    if data.is_empty() {
        return Err(CoreError::Data("cannot train on an empty dataset".into()));
    }
    if data.dim() != model_cfg.in_dim {
        return Err(CoreError::Shape(format!(
            "data dimension {} does not match model input {}",
            data.dim(),
            model_cfg.in_dim
        )));
    }
    if data.classes() != model_cfg.classes {
        return Err(CoreError::Shape(format!(
            "data has {} classes, model expects {}",
            data.classes(),
            model_cfg.classes
        )));
    }

    let mut model = build_model(model_cfg)?;
    let counts = data.class_counts();

    // The teacher is frozen, so its targets for the whole dataset are
    // computed exactly once.
    let supervision = match teacher {
        Some((t, cfg)) => {
            cfg.validate()?;
            if cfg.weight > 0.0 {
                if t.classes() != model_cfg.classes || t.in_dim() != model_cfg.in_dim {
                    return Err(CoreError::Shape(
                        "teacher and student disagree on input or class dimensions".into(),
                    ));
                }
                if model_cfg.n_experts > t.n_experts() {
                    return Err(CoreError::Config(format!(
                        "student has {} experts but the teacher only {}",
                        model_cfg.n_experts,
                        t.n_experts()
                    )));
                }
                let targets = t.expert_outputs(data.features())?.full_mean().clone();
                Some((targets, cfg.temperature, cfg.weight))
            } else {
                None
            }
        }
        None => None,
    };

    let mut params = model.params();
    let mut optim = OptimState::new(params.len(), train_cfg.momentum, 0.0);
    let mut metrics = Vec::with_capacity(train_cfg.epochs);
    let n = data.len();
    for epoch in 0..train_cfg.epochs {
        let objective = loss_cfg.at_epoch(temps, &counts, epoch, model_cfg.n_experts)?;
        optim.lr = train_cfg.schedule.lr_at_epoch(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, seed::derive(train_cfg.seed, epoch as u64 + 1));
        let mut sums = EpochMetrics {
            epoch,
            lr: optim.lr,
            total: 0.0,
            classify: 0.0,
            diversity: 0.0,
            distill: 0.0,
        };
        for (batch_idx, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let wrap = stamp(epoch, batch_idx);
            let batch = data.subset(chunk)?;
            let (breakdown, mut grads) =
                total_loss(&model, batch.features(), batch.labels(), &objective)
                    .map_err(&wrap)?;
            let mut batch_total = breakdown.total;
            let mut batch_distill = 0.0;
            if let Some((targets, temperature, weight)) = &supervision {
                let target_rows = gather_rows(targets, chunk)?;
                let (outputs, trace) = model.forward_traced(batch.features()).map_err(&wrap)?;
                let (kd_value, kd_logit_grads) =
                    kd_term(&outputs, &target_rows, *temperature).map_err(&wrap)?;
                let mut kd_grads = model.backward(&trace, &kd_logit_grads).map_err(&wrap)?;
                kd_grads.scale(*weight);
                grads.add_assign(&kd_grads);
                batch_distill = kd_value;
                batch_total += weight * kd_value;
            }
            sgd_momentum_step(&mut params, &grads.flatten(), &mut optim).map_err(&wrap)?;
            model.set_params(&params).map_err(&wrap)?;
            let share = chunk.len() as f64 / n as f64;
            sums.total += share * batch_total;
            sums.classify += share * breakdown.classify;
            sums.diversity += share * breakdown.diversity;
            sums.distill += share * batch_distill;
        }
        metrics.push(sums);
    }
    Ok((model, metrics))
}

/// Argmax predictions of the first `m` experts' ensemble; ties go to the
/// smallest class index.
pub fn predict(model: &RideModel, batch: &ValueGrid, m: usize) -> Result<Vec<usize>> {
    let probs = model.ensemble_probs(batch, m)?;
    Ok(probs
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

/// Fraction of instances where `predictions` matches `truth`.
pub fn accuracy(predictions: &[usize], truth: &[usize]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(CoreError::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if predictions.is_empty() {
        return Err(CoreError::Config("accuracy needs at least one instance".into()));
    }
    let hits = predictions.iter().zip(truth).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / predictions.len() as f64)
}
