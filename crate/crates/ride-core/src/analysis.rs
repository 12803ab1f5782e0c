//! Replicated-training analysis: the 0-1-loss bias/variance decomposition
//! over replicate models, hardest-negative confidence profiles, and accuracy
//! broken down by class-frequency split.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Shot, ShotSplits};
use crate::error::{CoreError, Result};
use crate::grid::ValueGrid;

/// Class predictions of several replicate models on one shared test set,
/// stored model-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionMatrix {
    models: usize,
    instances: usize,
    classes: usize,
    preds: Vec<usize>,
}

impl PredictionMatrix {
    /// One row per replicate model; rows must agree in length and stay below
    /// `classes`. A single model has no spread to decompose, so two rows is
    /// the minimum.
    pub fn from_rows(rows: Vec<Vec<usize>>, classes: usize) -> Result<Self> {
        let models = rows.len();
        if models < 2 {
            return Err(CoreError::Config(format!(
                "need at least two replicates, got {models}"
            )));
        }
        if classes < 2 {
            return Err(CoreError::Config(format!("need at least two classes, got {classes}")));
        }
        let instances = rows[0].len();
        if instances == 0 {
            return Err(CoreError::Config("need at least one test instance".into()));
        }
        let mut preds = Vec::with_capacity(models * instances);
        for row in &rows {
            if row.len() != instances {
                return Err(CoreError::Shape(format!(
                    "replicate predicted {} instances, expected {instances}",
                    row.len()
                )));
            }
            if let Some(&bad) = row.iter().find(|&&p| p >= classes) {
                return Err(CoreError::Data(format!(
                    "prediction {bad} out of range for {classes} classes"
                )));
            }
            preds.extend_from_slice(row);
        }
        Ok(Self {
            models,
            instances,
            classes,
            preds,
        })
    }

    pub fn models(&self) -> usize {
        self.models
    }

    pub fn instances(&self) -> usize {
        self.instances
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn prediction(&self, model: usize, instance: usize) -> usize {
        assert!(model < self.models && instance < self.instances);
        self.preds[model * self.instances + instance]
    }

    /// The mode of the replicate predictions on one instance; ties go to the
    /// smallest class index.
    pub fn main_prediction(&self, instance: usize) -> usize {
        let mut counts = vec![0usize; self.classes];
        for model in 0..self.models {
            counts[self.prediction(model, instance)] += 1;
        }
        let mut best = 0;
        for (class, &count) in counts.iter().enumerate() {
            if count > counts[best] {
                best = class;
            }
        }
        best
    }
}

/// The 0-1-loss decomposition of a replicate experiment.
///
/// Per instance, bias is 1 when the main (modal) prediction misses the true
/// label, and variance is the fraction of replicates that disagree with the
/// main prediction. Per-class figures average over that class's test
/// instances; classes absent from the test set report 0 and can be told
/// apart by `per_class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroOneDecomposition {
    pub main_predictions: Vec<usize>,
    pub per_class_bias: Vec<f64>,
    pub per_class_variance: Vec<f64>,
    pub per_class_count: Vec<usize>,
    /// Mean over all test instances.
    pub bias: f64,
    /// Mean over all test instances.
    pub variance: f64,
}

pub fn zero_one_decomposition(
    preds: &PredictionMatrix,
    truth: &[usize],
) -> Result<ZeroOneDecomposition> {
    if truth.len() != preds.instances() {
        return Err(CoreError::Shape(format!(
            "{} labels for {} test instances",
            truth.len(),
            preds.instances()
        )));
    }
    if let Some(&bad) = truth.iter().find(|&&y| y >= preds.classes()) {
        return Err(CoreError::Data(format!(
            "label {bad} out of range for {} classes",
            preds.classes()
        )));
    }
    let classes = preds.classes();
    let mut per_class_bias = vec![0.0; classes];
    let mut per_class_variance = vec![0.0; classes];
    let mut per_class_count = vec![0usize; classes];
    let mut main_predictions = Vec::with_capacity(preds.instances());
    let mut bias_sum = 0.0;
    let mut var_sum = 0.0;
    for (i, &y) in truth.iter().enumerate() {
        let main = preds.main_prediction(i);
        main_predictions.push(main);
        let biased = if main != y { 1.0 } else { 0.0 };
        let disagree = (0..preds.models())
            .filter(|&m| preds.prediction(m, i) != main)
            .count() as f64
            / preds.models() as f64;
        per_class_bias[y] += biased;
        per_class_variance[y] += disagree;
        per_class_count[y] += 1;
        bias_sum += biased;
        var_sum += disagree;
    }
    for c in 0..classes {
        if per_class_count[c] > 0 {
            per_class_bias[c] /= per_class_count[c] as f64;
            per_class_variance[c] /= per_class_count[c] as f64;
        }
    }
    Ok(ZeroOneDecomposition {
        main_predictions,
        per_class_bias,
        per_class_variance,
        per_class_count,
        bias: bias_sum / preds.instances() as f64,
        variance: var_sum / preds.instances() as f64,
    })
}

/// Runs `train_predict` once per replicate and assembles the predictions.
/// The closure receives the replicate index and returns that model's
/// predictions on the shared test set.
pub fn replicate_predictions<F>(
    replicates: usize,
    classes: usize,
    mut train_predict: F,
) -> Result<PredictionMatrix>
where
    F: FnMut(usize) -> Result<Vec<usize>>,
{
    if replicates < 2 {
        return Err(CoreError::Config(format!(
            "need at least two replicates, got {replicates}"
        )));
    }
    let rows = (0..replicates)
        .map(&mut train_predict)
        .collect::<Result<Vec<_>>>()?;
    PredictionMatrix::from_rows(rows, classes)
}

/// Per instance, the largest probability assigned to any wrong class.
pub fn hardest_negative_scores(probs: &ValueGrid, truth: &[usize]) -> Result<Vec<f64>> {
    if truth.len() != probs.rows() {
        return Err(CoreError::Shape(format!(
            "{} labels for {} probability rows",
            truth.len(),
            probs.rows()
        )));
    }
    if probs.cols() < 2 {
        return Err(CoreError::Config("hardest negative needs at least two classes".into()));
    }
    if let Some(&bad) = truth.iter().find(|&&y| y >= probs.cols()) {
        return Err(CoreError::Data(format!(
            "label {bad} out of range for {} classes",
            probs.cols()
        )));
    }
    Ok(probs
        .iter_rows()
        .zip(truth)
        .map(|(row, &y)| {
            row.iter()
                .enumerate()
                .filter(|&(c, _)| c != y)
                .map(|(_, &p)| p)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect())
}

/// Counts of scores falling into `bins` equal-width bins over [0, 1].
/// Out-of-range scores are clamped into the edge bins.
pub fn score_histogram(scores: &[f64], bins: usize) -> Result<Vec<usize>> {
    if bins == 0 {
        return Err(CoreError::Config("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0usize; bins];
    for &s in scores {
        if !s.is_finite() {
            return Err(CoreError::Numeric(format!("non-finite score {s}")));
        }
        let bin = ((s.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    Ok(counts)
}

/// Accuracy over every instance and within each class-frequency split.
/// A split with no test instances reports `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitAccuracy {
    pub overall: f64,
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
}

pub fn accuracy_by_split(
    predictions: &[usize],
    truth: &[usize],
    splits: &ShotSplits,
) -> Result<SplitAccuracy> {
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
    if let Some(&bad) = truth.iter().find(|&&y| y >= splits.classes()) {
        return Err(CoreError::Data(format!(
            "label {bad} out of range for {} classes",
            splits.classes()
        )));
    }
    let mut hit = [0usize; 3];
    let mut seen = [0usize; 3];
    let mut correct = 0usize;
    for (&p, &y) in predictions.iter().zip(truth) {
        let slot = match splits.shot_of(y) {
            Shot::Many => 0,
            Shot::Medium => 1,
            Shot::Few => 2,
        };
        seen[slot] += 1;
        if p == y {
            hit[slot] += 1;
            correct += 1;
        }
    }
    let rate = |slot: usize| {
        if seen[slot] == 0 {
            None
        } else {
            Some(hit[slot] as f64 / seen[slot] as f64)
        }
    };
    Ok(SplitAccuracy {
        overall: correct as f64 / predictions.len() as f64,
        many: rate(0),
        medium: rate(1),
        few: rate(2),
    })
}
