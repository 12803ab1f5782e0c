//! Knowledge distillation from a frozen ensemble: each student expert is
//! pulled toward the teacher's mean-logit predictive distribution through a
//! temperature-scaled divergence.

use alloc::format;
use alloc::vec::Vec;

// In no_std builds the math methods come from the Float trait; std test
// builds resolve them as inherent methods and would flag the import.
#[cfg(not(test))]
use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::experts::ExpertOutput;
use crate::grid::ValueGrid;
use crate::losses::PROB_FLOOR;
use crate::numeric;

pub const DEFAULT_KD_TEMPERATURE: f64 = 2.0;
pub const DEFAULT_KD_WEIGHT: f64 = 1.0;

/// How strongly and at what temperature the teacher's outputs supervise the
/// student. A weight of zero disables distillation entirely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub temperature: f64,
    pub weight: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_KD_TEMPERATURE,
            weight: DEFAULT_KD_WEIGHT,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(CoreError::Config(format!(
                "distillation temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(CoreError::Config(format!(
                "distillation weight must be non-negative, got {}",
                self.weight
            )));
        }
        Ok(())
    }
}

/// Distillation loss for one set of student logits against fixed teacher
/// logits: `T^2` times the batch-mean KL from the teacher's softened
/// distribution to the student's.
///
/// Returns the value and its gradient w.r.t. the student logits; the teacher
/// is a constant. The `T^2` factor keeps gradient magnitudes comparable
/// across temperatures: d/ds = T * (q - p) / batch, with p the teacher's and
/// q the student's softened probabilities.
pub fn kd_loss(
    student_logits: &ValueGrid,
    teacher_logits: &ValueGrid,
    temperature: f64,
) -> Result<(f64, ValueGrid)> {
    if student_logits.rows() != teacher_logits.rows()
        || student_logits.cols() != teacher_logits.cols()
    {
        return Err(CoreError::Shape(format!(
            "student {}x{} vs teacher {}x{} logits",
            student_logits.rows(),
            student_logits.cols(),
            teacher_logits.rows(),
            teacher_logits.cols()
        )));
    }
    if student_logits.rows() == 0 {
        return Err(CoreError::Config("empty batch".into()));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(CoreError::Config(format!(
            "distillation temperature must be positive, got {temperature}"
        )));
    }
    let batch = student_logits.rows();
    let cols = student_logits.cols();
    let inv_b = 1.0 / batch as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(batch * cols);
    let mut p = Vec::with_capacity(cols);
    let mut q = Vec::with_capacity(cols);
    let mut soft = alloc::vec![0.0; cols];
    for (s_row, t_row) in student_logits.iter_rows().zip(teacher_logits.iter_rows()) {
        for (dst, &z) in soft.iter_mut().zip(t_row) {
            *dst = z / temperature;
        }
        p.clear();
        numeric::softmax_into(&soft, &mut p);
        for (dst, &z) in soft.iter_mut().zip(s_row) {
            *dst = z / temperature;
        }
        q.clear();
        numeric::softmax_into(&soft, &mut q);
        for (&pk, &qk) in p.iter().zip(&q) {
            value += pk * (pk.max(PROB_FLOOR) / qk.max(PROB_FLOOR)).ln();
            grad.push(temperature * (qk - pk) * inv_b);
        }
    }
    Ok((
        temperature * temperature * value * inv_b,
        ValueGrid::matrix(batch, cols, grad)?,
    ))
}

/// Distillation terms for every student expert against one teacher
/// distribution: the summed loss and the per-expert logit gradients.
pub fn kd_term(
    outputs: &ExpertOutput,
    teacher_logits: &ValueGrid,
    temperature: f64,
) -> Result<(f64, Vec<ValueGrid>)> {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(outputs.n_experts());
    for i in 0..outputs.n_experts() {
        let (value, grad) = kd_loss(outputs.expert(i), teacher_logits, temperature)?;
        total += value;
        grads.push(grad);
    }
    Ok((total, grads))
}
