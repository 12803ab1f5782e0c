//! The training objective family: weighted cross-entropy, class-count-aware
//! margins with deferred re-weighting, focal loss, per-expert and ensemble
//! aggregation, class-wise temperatures, and the pairwise divergence term
//! that pushes experts apart on rare classes.
//!
//! Logit-level losses return `(value, d_logits)`; model-level losses run the
//! forward pass themselves and return `(value, ModelGrads)`. Every gradient
//! here is exercised against central finite differences in the test suites.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// In no_std builds the math methods come from the Float trait; std test
// builds resolve them as inherent methods and would flag the import.
#[cfg(not(test))]
use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::experts::{ExpertOutput, ModelGrads, RideModel};
use crate::grid::ValueGrid;
use crate::numeric;

/// Probabilities are floored at this value inside logarithms so a fully
/// saturated softmax cannot produce an infinite divergence.
pub const PROB_FLOOR: f64 = 1e-12;

/// Which base classification loss trains each expert.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Plain cross-entropy, never re-weighted.
    CrossEntropy,
    /// Cross-entropy on margin-adjusted scaled logits, with effective-number
    /// re-weighting switched on late in training.
    LdamDrw,
    /// Cross-entropy scaled by `(1 - p_true)^gamma`.
    Focal,
}

/// Full description of the training objective.
///
/// Epoch-dependent pieces (re-weighting, diversity activation) are resolved
/// by [`LossConfig::at_epoch`] into an [`EpochObjective`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight of the diversity term in the total objective.
    pub lambda: f64,
    /// Explicit margin scale `C` in `C / n_k^(1/4)`. When `None`, `C` is
    /// derived so the largest margin equals `ldam_max_margin`.
    pub ldam_c: Option<f64>,
    pub ldam_max_margin: f64,
    pub ldam_scale: f64,
    /// Epoch at which effective-number re-weighting switches on.
    pub drw_start_epoch: usize,
    pub drw_beta: f64,
    pub focal_gamma: f64,
}

pub const DEFAULT_LAMBDA: f64 = 0.2;
pub const DEFAULT_LDAM_MAX_MARGIN: f64 = 0.5;
pub const DEFAULT_LDAM_SCALE: f64 = 30.0;
pub const DEFAULT_DRW_BETA: f64 = 0.9999;
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;

impl LossConfig {
    /// A plain cross-entropy objective with no diversity term.
    pub fn cross_entropy() -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            lambda: 0.0,
            ldam_c: None,
            ldam_max_margin: DEFAULT_LDAM_MAX_MARGIN,
            ldam_scale: DEFAULT_LDAM_SCALE,
            drw_start_epoch: usize::MAX,
            drw_beta: DEFAULT_DRW_BETA,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
        }
    }

    /// Margin loss with re-weighting deferred to `drw_start_epoch`.
    pub fn ldam_drw(drw_start_epoch: usize) -> Self {
        Self {
            kind: LossKind::LdamDrw,
            lambda: DEFAULT_LAMBDA,
            ldam_c: None,
            ldam_max_margin: DEFAULT_LDAM_MAX_MARGIN,
            ldam_scale: DEFAULT_LDAM_SCALE,
            drw_start_epoch,
            drw_beta: DEFAULT_DRW_BETA,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
        }
    }
}

/// Class-wise temperature schedule for the diversity term.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureSchedule {
    /// Global temperature; every class's temperature is at most `alpha`.
    pub alpha: f64,
    /// Interpolation toward count-proportional scaling: 0 gives a flat
    /// schedule, 1 scales fully with class frequency.
    pub gamma: f64,
    /// Lower clamp, as a fraction of `alpha`.
    pub floor: f64,
    /// First epoch at which the diversity term is active.
    pub start_epoch: usize,
}

pub const DEFAULT_TEMP_ALPHA: f64 = 1.0;
pub const DEFAULT_TEMP_GAMMA: f64 = 0.3;
pub const DEFAULT_TEMP_FLOOR: f64 = 0.1;

impl TemperatureSchedule {
    pub fn new(alpha: f64, gamma: f64, floor: f64, start_epoch: usize) -> Self {
        Self {
            alpha,
            gamma,
            floor,
            start_epoch,
        }
    }

    /// Per-class temperatures for the given training counts.
    pub fn class_temperatures(&self, counts: &[usize]) -> Result<Vec<f64>> {
        class_temperatures(counts, self.alpha, self.gamma, self.floor)
    }
}

/// Per-class diversity temperatures.
///
/// With `r_k = n_k / mean(n)`, each class gets `beta_k = 1 + gamma*(r_k - 1)`
/// and `T_k = alpha * (beta_k + 1 - max_j beta_j)`, clamped from below at
/// `floor * alpha`. The most frequent class always sits at `alpha`; rarer
/// classes run colder, sharpening their predictions before the divergence is
/// measured. Balanced counts give every class exactly `alpha`.
pub fn class_temperatures(counts: &[usize], alpha: f64, gamma: f64, floor: f64) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(CoreError::Config("temperatures need at least one class".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(CoreError::Config(format!("alpha must be positive, got {alpha}")));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(CoreError::Config(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    if !(floor > 0.0 && floor <= 1.0) {
        return Err(CoreError::Config(format!("floor must lie in (0, 1], got {floor}")));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(CoreError::Config("temperatures need a non-empty profile".into()));
    }
    let mean = total as f64 / counts.len() as f64;
    // `1 + gamma*(r - 1)` rather than `gamma*r + (1 - gamma)` so balanced
    // profiles (r = 1) give beta = 1 without rounding residue.
    let betas: Vec<f64> = counts
        .iter()
        .map(|&n| 1.0 + gamma * (n as f64 / mean - 1.0))
        .collect();
    let beta_max = betas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(betas
        .iter()
        .map(|b| (alpha * (b + 1.0 - beta_max)).max(floor * alpha))
        .collect())
}

/// Softmax of logits divided class-wise by their temperatures.
pub fn tempered_probs(logits: &ValueGrid, temperatures: &[f64]) -> Result<ValueGrid> {
    if temperatures.len() != logits.cols() {
        return Err(CoreError::Shape(format!(
            "{} temperatures for {} classes",
            temperatures.len(),
            logits.cols()
        )));
    }
    if temperatures.iter().any(|&t| !(t.is_finite() && t > 0.0)) {
        return Err(CoreError::Config("temperatures must be positive".into()));
    }
    let cols = logits.cols();
    let mut out = Vec::with_capacity(logits.rows() * cols);
    let mut scaled = vec![0.0; cols];
    for row in logits.iter_rows() {
        for ((s, &z), &t) in scaled.iter_mut().zip(row).zip(temperatures) {
            *s = z / t;
        }
        numeric::softmax_into(&scaled, &mut out);
    }
    ValueGrid::matrix(logits.rows(), cols, out)
}

fn check_batch(logits: &ValueGrid, labels: &[usize]) -> Result<()> {
    if logits.rows() == 0 {
        return Err(CoreError::Config("empty batch".into()));
    }
    if labels.len() != logits.rows() {
        return Err(CoreError::Shape(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(CoreError::Data(format!(
            "label {bad} out of range for {} classes",
            logits.cols()
        )));
    }
    Ok(())
}

fn check_class_weights(weights: Option<&[f64]>, classes: usize) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != classes {
            return Err(CoreError::Shape(format!(
                "{} class weights for {classes} classes",
                w.len()
            )));
        }
        if w.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(CoreError::Config("class weights must be non-negative".into()));
        }
    }
    Ok(())
}

/// Class-weighted cross-entropy over a batch.
///
/// The value is the plain mean over instances of `w_y * (-log softmax(z)_y)`;
/// weights rescale each instance's contribution and are deliberately not
/// normalized away by their sum. Returns the loss and its gradient w.r.t.
/// the logits.
pub fn cross_entropy(
    logits: &ValueGrid,
    labels: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<(f64, ValueGrid)> {
    check_batch(logits, labels)?;
    check_class_weights(class_weights, logits.cols())?;
    let batch = logits.rows();
    let cols = logits.cols();
    let inv_b = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(batch * cols);
    for (row, &y) in logits.iter_rows().zip(labels) {
        let w = class_weights.map_or(1.0, |ws| ws[y]);
        let lse = numeric::logsumexp(row);
        loss += w * (lse - row[y]);
        let start = grad.len();
        numeric::softmax_into(row, &mut grad);
        let g_row = &mut grad[start..];
        g_row[y] -= 1.0;
        for g in g_row.iter_mut() {
            *g *= w * inv_b;
        }
    }
    Ok((loss * inv_b, ValueGrid::matrix(batch, cols, grad)?))
}

/// Per-class margins `C / n_k^(1/4)`.
pub fn ldam_margins(counts: &[usize], c: f64) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(CoreError::Config("margins need at least one class".into()));
    }
    if counts.iter().any(|&n| n == 0) {
        return Err(CoreError::Config("margins need positive class counts".into()));
    }
    if !(c.is_finite() && c >= 0.0) {
        return Err(CoreError::Config(format!("margin scale must be non-negative, got {c}")));
    }
    Ok(counts.iter().map(|&n| c / (n as f64).powf(0.25)).collect())
}

/// Margins normalized so the rarest class gets exactly `max_margin`.
pub fn ldam_margins_normalized(counts: &[usize], max_margin: f64) -> Result<Vec<f64>> {
    let min = *counts
        .iter()
        .min()
        .ok_or_else(|| CoreError::Config(String::from("margins need at least one class")))?;
    if min == 0 {
        return Err(CoreError::Config("margins need positive class counts".into()));
    }
    ldam_margins(counts, max_margin * (min as f64).powf(0.25))
}

/// Margin loss: weighted cross-entropy on `scale * (z - margin_y)` where the
/// margin is subtracted from the true-class logit only. `class_weights`
/// carries the deferred re-weighting once it is active.
pub fn ldam_drw_loss(
    logits: &ValueGrid,
    labels: &[usize],
    margins: &[f64],
    class_weights: Option<&[f64]>,
    scale: f64,
) -> Result<(f64, ValueGrid)> {
    check_batch(logits, labels)?;
    if margins.len() != logits.cols() {
        return Err(CoreError::Shape(format!(
            "{} margins for {} classes",
            margins.len(),
            logits.cols()
        )));
    }
    if margins.iter().any(|&m| !(m.is_finite() && m >= 0.0)) {
        return Err(CoreError::Config("margins must be non-negative".into()));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(CoreError::Config(format!("logit scale must be positive, got {scale}")));
    }
    let cols = logits.cols();
    let mut adjusted = Vec::with_capacity(logits.rows() * cols);
    for (row, &y) in logits.iter_rows().zip(labels) {
        for (k, &z) in row.iter().enumerate() {
            let m = if k == y { margins[y] } else { 0.0 };
            adjusted.push(scale * (z - m));
        }
    }
    let adjusted = ValueGrid::matrix(logits.rows(), cols, adjusted)?;
    let (loss, mut grad) = cross_entropy(&adjusted, labels, class_weights)?;
    for g in grad.data_mut() {
        *g *= scale;
    }
    Ok((loss, grad))
}

/// Effective-number class weights `(1 - beta) / (1 - beta^n_k)`, normalized
/// to mean one.
pub fn drw_weights(counts: &[usize], beta: f64) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(CoreError::Config("weights need at least one class".into()));
    }
    if counts.iter().any(|&n| n == 0) {
        return Err(CoreError::Config("weights need positive class counts".into()));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(CoreError::Config(format!("beta must lie in [0, 1), got {beta}")));
    }
    let raw: Vec<f64> = counts
        .iter()
        .map(|&n| (1.0 - beta) / (1.0 - beta.powi(n as i32)))
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.iter().map(|w| w / mean).collect())
}

/// Focal loss: mean of `-(1 - p_y)^gamma * log(p_y)`.
///
/// `gamma = 0` reduces exactly to unweighted cross-entropy (it shares that
/// code path). Saturated instances (`p_y` within 1e-15 of 1) contribute zero
/// loss and gradient, which is their analytic limit for positive `gamma`.
pub fn focal_loss(logits: &ValueGrid, labels: &[usize], gamma: f64) -> Result<(f64, ValueGrid)> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(CoreError::Config(format!("gamma must be non-negative, got {gamma}")));
    }
    if gamma == 0.0 {
        return cross_entropy(logits, labels, None);
    }
    check_batch(logits, labels)?;
    let batch = logits.rows();
    let cols = logits.cols();
    let inv_b = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(batch * cols);
    let mut probs = Vec::with_capacity(cols);
    for (row, &y) in logits.iter_rows().zip(labels) {
        probs.clear();
        numeric::softmax_into(row, &mut probs);
        let p = probs[y];
        let miss = 1.0 - p;
        let start = grad.len();
        if miss <= 1e-15 {
            grad.resize(start + cols, 0.0);
            continue;
        }
        let log_p = p.max(PROB_FLOOR).ln();
        loss -= miss.powf(gamma) * log_p;
        // dL/dp = gamma*(1-p)^(gamma-1)*ln(p) - (1-p)^gamma / p.
        let dl_dp = gamma * miss.powf(gamma - 1.0) * log_p - miss.powf(gamma) / p;
        for (k, &pk) in probs.iter().enumerate() {
            let dp_dz = p * (if k == y { 1.0 } else { 0.0 } - pk);
            grad.push(dl_dp * dp_dz * inv_b);
        }
    }
    Ok((loss * inv_b, ValueGrid::matrix(batch, cols, grad)?))
}

/// The base loss with every epoch-dependent ingredient resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedBase {
    PlainCe,
    Ldam {
        margins: Vec<f64>,
        class_weights: Option<Vec<f64>>,
        scale: f64,
    },
    Focal {
        gamma: f64,
    },
}

/// The objective at one epoch: base-loss ingredients, the diversity weight,
/// and the class temperatures (present only while the diversity term is
/// active).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochObjective {
    pub base: ResolvedBase,
    pub lambda: f64,
    pub temperatures: Option<Vec<f64>>,
}

impl LossConfig {
    /// Resolves margins, deferred re-weighting, and diversity activation for
    /// one epoch of training on a dataset with the given class counts.
    pub fn at_epoch(
        &self,
        temps: &TemperatureSchedule,
        counts: &[usize],
        epoch: usize,
        n_experts: usize,
    ) -> Result<EpochObjective> {
        let base = match self.kind {
            LossKind::CrossEntropy => ResolvedBase::PlainCe,
            LossKind::Focal => ResolvedBase::Focal {
                gamma: self.focal_gamma,
            },
            LossKind::LdamDrw => {
                let margins = match self.ldam_c {
                    Some(c) => ldam_margins(counts, c)?,
                    None => ldam_margins_normalized(counts, self.ldam_max_margin)?,
                };
                let class_weights = if epoch >= self.drw_start_epoch {
                    Some(drw_weights(counts, self.drw_beta)?)
                } else {
                    None
                };
                ResolvedBase::Ldam {
                    margins,
                    class_weights,
                    scale: self.ldam_scale,
                }
            }
        };
        // The diversity term needs at least two experts to compare and is
        // skipped entirely at weight zero so it cannot perturb a run that
        // disables it.
        let temperatures = if n_experts >= 2 && self.lambda != 0.0 && epoch >= temps.start_epoch {
            Some(temps.class_temperatures(counts)?)
        } else {
            None
        };
        Ok(EpochObjective {
            base,
            lambda: self.lambda,
            temperatures,
        })
    }
}

impl EpochObjective {
    /// Objective with the diversity term off at every epoch.
    pub fn classify_only(base: ResolvedBase) -> Self {
        Self {
            base,
            lambda: 0.0,
            temperatures: None,
        }
    }

    pub fn diversity_active(&self) -> bool {
        self.temperatures.is_some() && self.lambda != 0.0
    }

    /// The resolved base loss on one set of logits.
    pub fn base_loss(&self, logits: &ValueGrid, labels: &[usize]) -> Result<(f64, ValueGrid)> {
        match &self.base {
            ResolvedBase::PlainCe => cross_entropy(logits, labels, None),
            ResolvedBase::Ldam {
                margins,
                class_weights,
                scale,
            } => ldam_drw_loss(logits, labels, margins, class_weights.as_deref(), *scale),
            ResolvedBase::Focal { gamma } => focal_loss(logits, labels, *gamma),
        }
    }
}

/// Diversity term for one expert, straight from per-expert logits: the
/// negative mean over the other experts of `KL(p_i || p_j)` between tempered
/// predictive distributions, averaged over the batch.
///
/// Returns the (non-positive) value and the gradient w.r.t. every expert's
/// logits; gradients flow through both sides of each divergence.
pub fn diversity_term(
    outputs: &ExpertOutput,
    temperatures: &[f64],
    expert: usize,
) -> Result<(f64, Vec<ValueGrid>)> {
    let n = outputs.n_experts();
    if n < 2 {
        return Err(CoreError::Config(format!(
            "diversity needs at least two experts, got {n}"
        )));
    }
    if expert >= n {
        return Err(CoreError::Config(format!(
            "expert {expert} out of range ({n} experts)"
        )));
    }
    let batch = outputs.batch();
    let cols = outputs.classes();
    let probs: Vec<ValueGrid> = (0..n)
        .map(|i| tempered_probs(outputs.expert(i), temperatures))
        .collect::<Result<Vec<_>>>()?;
    let mut d_logits: Vec<ValueGrid> = (0..n).map(|_| ValueGrid::zeros(batch, cols)).collect();
    // Averaged over the batch and the n-1 comparisons.
    let norm = 1.0 / ((n - 1) as f64 * batch as f64);
    let mut value = 0.0;
    for j in 0..n {
        if j == expert {
            continue;
        }
        for b in 0..batch {
            let p = probs[expert].row(b);
            let q = probs[j].row(b);
            let mut kl = 0.0;
            for (&pk, &qk) in p.iter().zip(q) {
                kl += pk * (pk.max(PROB_FLOOR) / qk.max(PROB_FLOOR)).ln();
            }
            value -= norm * kl;
            {
                // d(-KL)/d a_i = -p_k (ln(p_k/q_k) - KL), through the tempered
                // softmax a = z / T.
                let d_i = d_logits[expert].data_mut();
                for k in 0..cols {
                    let log_ratio = (p[k].max(PROB_FLOOR) / q[k].max(PROB_FLOOR)).ln();
                    d_i[b * cols + k] -= norm * p[k] * (log_ratio - kl) / temperatures[k];
                }
            }
            {
                // d(-KL)/d a_j = -(q_k - p_k) = p_k - q_k.
                let d_j = d_logits[j].data_mut();
                for k in 0..cols {
                    d_j[b * cols + k] += norm * (p[k] - q[k]) / temperatures[k];
                }
            }
        }
    }
    Ok((value, d_logits))
}

/// Model-level diversity term for one expert (forward pass included).
pub fn diversity_loss(
    model: &RideModel,
    batch: &ValueGrid,
    temperatures: &[f64],
    expert: usize,
) -> Result<(f64, ModelGrads)> {
    let (outputs, trace) = model.forward_traced(batch)?;
    let (value, d_logits) = diversity_term(&outputs, temperatures, expert)?;
    Ok((value, model.backward(&trace, &d_logits)?))
}

/// Sum over experts of the base loss on each expert's own logits.
pub fn individual_loss(
    model: &RideModel,
    batch: &ValueGrid,
    labels: &[usize],
    objective: &EpochObjective,
) -> Result<(f64, ModelGrads)> {
    let (outputs, trace) = model.forward_traced(batch)?;
    let mut total = 0.0;
    let mut d_logits = Vec::with_capacity(outputs.n_experts());
    for i in 0..outputs.n_experts() {
        let (value, grad) = objective.base_loss(outputs.expert(i), labels)?;
        total += value;
        d_logits.push(grad);
    }
    Ok((total, model.backward(&trace, &d_logits)?))
}

/// Base loss applied once to the mean logits of all experts.
pub fn collaborative_loss(
    model: &RideModel,
    batch: &ValueGrid,
    labels: &[usize],
    objective: &EpochObjective,
) -> Result<(f64, ModelGrads)> {
    let (outputs, trace) = model.forward_traced(batch)?;
    let n = outputs.n_experts();
    let (value, d_mean) = objective.base_loss(outputs.full_mean(), labels)?;
    // Each expert receives 1/n of the mean-logit gradient.
    let share = ValueGrid::matrix(
        d_mean.rows(),
        d_mean.cols(),
        d_mean.data().iter().map(|g| g / n as f64).collect(),
    )?;
    let d_logits = vec![share; n];
    Ok((value, model.backward(&trace, &d_logits)?))
}

/// Value breakdown of the full objective at one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub classify: f64,
    pub diversity: f64,
}

/// The full training objective: per-expert base losses plus `lambda` times
/// each expert's diversity term, when active.
///
/// With the diversity term inactive this is exactly [`individual_loss`],
/// computed through the identical code path.
pub fn total_loss(
    model: &RideModel,
    batch: &ValueGrid,
    labels: &[usize],
    objective: &EpochObjective,
) -> Result<(LossBreakdown, ModelGrads)> {
    let (outputs, trace) = model.forward_traced(batch)?;
    let n = outputs.n_experts();
    let mut classify = 0.0;
    let mut d_logits = Vec::with_capacity(n);
    for i in 0..n {
        let (value, grad) = objective.base_loss(outputs.expert(i), labels)?;
        classify += value;
        d_logits.push(grad);
    }
    let mut diversity = 0.0;
    if objective.diversity_active() {
        let temps = objective.temperatures.as_deref().expect("checked active");
        for i in 0..n {
            let (value, pair_grads) = diversity_term(&outputs, temps, i)?;
            diversity += value;
            for (acc, g) in d_logits.iter_mut().zip(&pair_grads) {
                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += objective.lambda * v;
                }
            }
        }
    }
    let grads = model.backward(&trace, &d_logits)?;
    Ok((
        LossBreakdown {
            total: classify + objective.lambda * diversity,
            classify,
            diversity,
        },
        grads,
    ))
}
