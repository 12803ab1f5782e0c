//! Emission of every run artifact: metrics CSV, evaluation JSON,
//! hardest-negative and routing histograms, cost reports, and the
//! bias/variance files. Schemas are documented in docs/schemas.md.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use ride_core::analysis::{
    accuracy_by_split, hardest_negative_scores, score_histogram, SplitAccuracy,
    ZeroOneDecomposition,
};
use ride_core::data::{LabeledDataset, LongTailProfile, Shot, ShotSplits};
use ride_core::experts::RideModel;
use ride_core::router::{CostModel, RoutingTrace};
use ride_core::train::{predict, EpochMetrics};

use crate::errors::{io_err, LabError, Result};

pub const HISTOGRAM_BINS: usize = 20;

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| LabError::Data(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,lr,total,classify,diversity,distill\n");
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            m.epoch, m.lr, m.total, m.classify, m.diversity, m.distill
        );
    }
    out
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    fs::write(path, metrics_csv(metrics)).map_err(|e| io_err(path, e))
}

pub fn write_router_metrics_csv(path: &Path, lr_per_epoch: &[f64], losses: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,lr,loss\n");
    for (epoch, (lr, loss)) in lr_per_epoch.iter().zip(losses).enumerate() {
        let _ = writeln!(out, "{epoch},{lr},{loss}");
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Mean of `values` overall and over the instances of each shot split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMeans {
    pub overall: f64,
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
}

pub fn split_means(values: &[f64], truth: &[usize], splits: &ShotSplits) -> Result<SplitMeans> {
    if values.len() != truth.len() || values.is_empty() {
        return Err(LabError::Data(format!(
            "{} values for {} labels",
            values.len(),
            truth.len()
        )));
    }
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for (&v, &y) in values.iter().zip(truth) {
        let slot = match splits.shot_of(y) {
            Shot::Many => 0,
            Shot::Medium => 1,
            Shot::Few => 2,
        };
        sums[slot] += v;
        counts[slot] += 1;
    }
    let mean = |slot: usize| {
        if counts[slot] == 0 {
            None
        } else {
            Some(sums[slot] / counts[slot] as f64)
        }
    };
    Ok(SplitMeans {
        overall: values.iter().sum::<f64>() / values.len() as f64,
        many: mean(0),
        medium: mean(1),
        few: mean(2),
    })
}

fn accuracy_json(acc: &SplitAccuracy) -> Value {
    json!({
        "overall": acc.overall,
        "many": acc.many,
        "medium": acc.medium,
        "few": acc.few,
    })
}

fn means_json(m: &SplitMeans) -> Value {
    json!({
        "overall": m.overall,
        "many": m.many,
        "medium": m.medium,
        "few": m.few,
    })
}

/// Accuracy and hardest-negative blocks for one dataset under the ensemble
/// of the first `m` experts.
pub fn dataset_eval_json(
    model: &RideModel,
    ds: &LabeledDataset,
    splits: &ShotSplits,
    m: usize,
) -> Result<Value> {
    let predictions = predict(model, ds.features(), m)?;
    let acc = accuracy_by_split(&predictions, ds.labels(), splits)?;
    let probs = model.ensemble_probs(ds.features(), m)?;
    let scores = hardest_negative_scores(&probs, ds.labels())?;
    let means = split_means(&scores, ds.labels(), splits)?;
    Ok(json!({
        "accuracy": accuracy_json(&acc),
        "hardest_negative": means_json(&means),
    }))
}

fn split_name(shot: Shot) -> &'static str {
    match shot {
        Shot::Many => "many",
        Shot::Medium => "medium",
        Shot::Few => "few",
    }
}

/// Hardest-negative score histogram, 20 uniform bins on [0,1], one block of
/// rows overall and per shot split with test instances.
pub fn hardest_negative_histogram_csv(
    scores: &[f64],
    truth: &[usize],
    splits: &ShotSplits,
) -> Result<String> {
    let mut out = String::from("split,bin_low,bin_high,count\n");
    let mut blocks: Vec<(&str, Vec<f64>)> = vec![("overall", scores.to_vec())];
    for shot in [Shot::Many, Shot::Medium, Shot::Few] {
        let subset: Vec<f64> = scores
            .iter()
            .zip(truth)
            .filter(|&(_, &y)| splits.shot_of(y) == shot)
            .map(|(&s, _)| s)
            .collect();
        if !subset.is_empty() {
            blocks.push((split_name(shot), subset));
        }
    }
    for (name, values) in blocks {
        let hist = score_histogram(&values, HISTOGRAM_BINS)?;
        for (bin, count) in hist.iter().enumerate() {
            let lo = bin as f64 / HISTOGRAM_BINS as f64;
            let hi = (bin + 1) as f64 / HISTOGRAM_BINS as f64;
            let _ = writeln!(out, "{name},{lo},{hi},{count}");
        }
    }
    Ok(out)
}

/// Per-split distribution of how many experts the cascade deployed:
/// `split,experts_used,fraction`, fractions summing to 1 within each block.
pub fn routing_histogram_csv(
    traces: &[RoutingTrace],
    truth: &[usize],
    splits: &ShotSplits,
    n_experts: usize,
) -> Result<String> {
    if traces.len() != truth.len() || traces.is_empty() {
        return Err(LabError::Data(format!(
            "{} routing traces for {} labels",
            traces.len(),
            truth.len()
        )));
    }
    let mut out = String::from("split,experts_used,fraction\n");
    let groups: Vec<(&str, Box<dyn Fn(usize) -> bool>)> = vec![
        ("overall", Box::new(|_| true)),
        ("many", Box::new(|y| splits.shot_of(y) == Shot::Many)),
        ("medium", Box::new(|y| splits.shot_of(y) == Shot::Medium)),
        ("few", Box::new(|y| splits.shot_of(y) == Shot::Few)),
    ];
    for (name, belongs) in groups {
        let mut counts = vec![0usize; n_experts];
        let mut total = 0usize;
        for (t, &y) in traces.iter().zip(truth) {
            if belongs(y) {
                counts[t.experts_used - 1] += 1;
                total += 1;
            }
        }
        if total == 0 {
            continue;
        }
        for (used, &count) in counts.iter().enumerate() {
            let _ = writeln!(out, "{name},{},{}", used + 1, count as f64 / total as f64);
        }
    }
    Ok(out)
}

/// Cost accounting of a routed test pass against the full-width single-model
/// reference budget.
pub fn cost_report_json(
    cost: &CostModel,
    traces: &[RoutingTrace],
    reference_macs: u64,
    threshold: f64,
    cascade_acc: &SplitAccuracy,
    full_acc: &SplitAccuracy,
    n_experts: usize,
) -> Value {
    let mean_experts =
        traces.iter().map(|t| t.experts_used as f64).sum::<f64>() / traces.len().max(1) as f64;
    json!({
        "threshold": threshold,
        "mean_experts_used": mean_experts,
        "n_experts": n_experts,
        "mean_cost_macs": cost.mean_cost(traces),
        "reference_macs": reference_macs,
        "relative_cost": cost.relative_cost(traces, reference_macs),
        "full_ensemble_cost_macs": cost.cost(n_experts),
        "full_ensemble_relative_cost": cost.cost(n_experts) as f64 / reference_macs as f64,
        "cascade_accuracy": accuracy_json(cascade_acc),
        "full_ensemble_accuracy": accuracy_json(full_acc),
    })
}

/// Per-class bias/variance rows: `class,n_k,bias,variance` with `n_k` the
/// training count of the class.
pub fn biasvar_csv(decomp: &ZeroOneDecomposition, profile: &LongTailProfile) -> String {
    let mut out = String::from("class,n_k,bias,variance\n");
    for c in 0..profile.classes() {
        let _ = writeln!(
            out,
            "{c},{},{},{}",
            profile.counts()[c],
            decomp.per_class_bias[c],
            decomp.per_class_variance[c]
        );
    }
    out
}

fn split_aggregate(
    decomp: &ZeroOneDecomposition,
    classes: &[usize],
    component: impl Fn(usize) -> f64,
) -> Option<f64> {
    let total: usize = classes.iter().map(|&c| decomp.per_class_count[c]).sum();
    if total == 0 {
        return None;
    }
    let sum: f64 = classes
        .iter()
        .map(|&c| component(c) * decomp.per_class_count[c] as f64)
        .sum();
    Some(sum / total as f64)
}

/// Split-keyed summary of one method's replicate study.
pub fn biasvar_json(
    method: &str,
    replicates: usize,
    decomp: &ZeroOneDecomposition,
    mean_accuracy: f64,
    splits: &ShotSplits,
) -> Value {
    let block = |classes: &[usize]| -> Value {
        let bias = split_aggregate(decomp, classes, |c| decomp.per_class_bias[c]);
        let variance = split_aggregate(decomp, classes, |c| decomp.per_class_variance[c]);
        match (bias, variance) {
            (Some(b), Some(v)) => json!({"bias": b, "variance": v}),
            _ => Value::Null,
        }
    };
    let all: Vec<usize> = (0..splits.classes()).collect();
    json!({
        "method": method,
        "replicates": replicates,
        "mean_accuracy": mean_accuracy,
        "overall": block(&all),
        "many": block(&splits.many()),
        "medium": block(&splits.medium()),
        "few": block(&splits.few()),
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}
