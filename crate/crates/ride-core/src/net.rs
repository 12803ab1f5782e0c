//! Dense feedforward substrate: layers, backprop, gradient checking, SGD
//! with momentum, and the step-decay learning-rate schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// In no_std builds the math methods come from this trait; it also settles
// numeric-literal inference in the test modules, so it stays unconditional.
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::grid::ValueGrid;

/// One affine layer `y = W x + b`, optionally followed by ReLU.
///
/// Weights are row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Vec<f64>,
    bias: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
    relu: bool,
}

impl DenseLayer {
    /// Fan-in-scaled uniform init: weights from U(-sqrt(6/in_dim), sqrt(6/in_dim)),
    /// bias zero.
    pub fn init(in_dim: usize, out_dim: usize, relu: bool, rng: &mut ChaCha8Rng) -> Self {
        assert!(in_dim > 0 && out_dim > 0, "layer dims must be positive");
        let limit = (6.0 / in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            weights,
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
            relu,
        }
    }

    pub fn from_parts(
        weights: Vec<f64>,
        bias: Vec<f64>,
        in_dim: usize,
        out_dim: usize,
        relu: bool,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(CoreError::Shape(format!(
                "layer {in_dim}->{out_dim} needs {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            weights,
            bias,
            in_dim,
            out_dim,
            relu,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn has_relu(&self) -> bool {
        self.relu
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// A chain of dense layers applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: Vec<DenseLayer>,
}

/// Post-activation values recorded during a traced forward pass.
///
/// `activations[0]` is the input batch; `activations[i + 1]` is the output of
/// layer `i`. Because ReLU output is positive exactly where its input is,
/// post-activation values are enough to replay the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    activations: Vec<ValueGrid>,
}

impl ForwardTrace {
    pub fn output(&self) -> &ValueGrid {
        self.activations.last().expect("trace is never empty")
    }

    pub fn input(&self) -> &ValueGrid {
        &self.activations[0]
    }
}

/// Parameter gradients for every layer of a stack, in layer order.
#[derive(Debug, Clone)]
pub struct StackGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
}

impl StackGrads {
    pub fn zeros_like(stack: &LayerStack) -> Self {
        let layers = stack
            .layers
            .iter()
            .map(|l| LayerGrads {
                d_weights: vec![0.0; l.weights.len()],
                d_bias: vec![0.0; l.bias.len()],
            })
            .collect();
        Self { layers }
    }

    /// Accumulates `other` into `self`. Shapes must match.
    pub fn add_assign(&mut self, other: &StackGrads) {
        assert_eq!(self.layers.len(), other.layers.len(), "grad layer count");
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            assert_eq!(a.d_weights.len(), b.d_weights.len(), "grad weight len");
            for (x, y) in a.d_weights.iter_mut().zip(&b.d_weights) {
                *x += y;
            }
            for (x, y) in a.d_bias.iter_mut().zip(&b.d_bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for v in &mut l.d_weights {
                *v *= factor;
            }
            for v in &mut l.d_bias {
                *v *= factor;
            }
        }
    }

    /// Appends all gradients in the stack's flat parameter order.
    pub fn append_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.d_weights);
            out.extend_from_slice(&l.d_bias);
        }
    }
}

impl LayerStack {
    /// Builds a stack, validating that consecutive layers chain.
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CoreError::Config("a layer stack needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(CoreError::Shape(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Stack of ReLU layers through `dims`, with a linear final layer.
    ///
    /// `dims` lists every width including input and output, so `dims.len() - 1`
    /// layers are created.
    pub fn init_relu_net(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(CoreError::Config(format!(
                "need at least input and output widths, got {dims:?}"
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(CoreError::Config(format!("zero width in {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::init(w[0], w[1], i != last, rng))
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Multiply-accumulate count for one instance: sum of `in * out` over
    /// layers. Bias adds and activations are not counted.
    pub fn macs_per_instance(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| (l.in_dim * l.out_dim) as u64)
            .sum()
    }

    /// Appends parameters (per layer: weights then bias) to `out`.
    pub fn append_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
    }

    /// Loads parameters from the front of `src` (same order as
    /// [`LayerStack::append_params`]), advancing the slice.
    pub fn load_params(&mut self, src: &mut &[f64]) -> Result<()> {
        for l in &mut self.layers {
            let need = l.param_count();
            if src.len() < need {
                return Err(CoreError::Shape(format!(
                    "parameter buffer exhausted: layer needs {need}, {} left",
                    src.len()
                )));
            }
            let (w, rest) = src.split_at(l.weights.len());
            let (b, rest) = rest.split_at(l.bias.len());
            l.weights.copy_from_slice(w);
            l.bias.copy_from_slice(b);
            *src = rest;
        }
        Ok(())
    }

    /// Applies the stack to a batch (`rows` instances of `in_dim` features).
    ///
    /// Pure function of parameters and input; repeated calls are bit-identical.
    pub fn forward(&self, input: &ValueGrid) -> Result<ValueGrid> {
        Ok(self.forward_traced(input)?.0)
    }

    /// Forward pass that records per-layer activations for [`LayerStack::backward`].
    pub fn forward_traced(&self, input: &ValueGrid) -> Result<(ValueGrid, ForwardTrace)> {
        if input.cols() != self.in_dim() {
            return Err(CoreError::Shape(format!(
                "input has {} features, stack expects {}",
                input.cols(),
                self.in_dim()
            )));
        }
        let batch = input.rows();
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for layer in &self.layers {
            let x = activations.last().expect("non-empty");
            let mut out = vec![0.0; batch * layer.out_dim];
            for (b, x_row) in x.iter_rows().enumerate() {
                let out_row = &mut out[b * layer.out_dim..(b + 1) * layer.out_dim];
                for (o, out_v) in out_row.iter_mut().enumerate() {
                    let w_row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    let mut acc = layer.bias[o];
                    for (w, xv) in w_row.iter().zip(x_row) {
                        acc += w * xv;
                    }
                    *out_v = if layer.relu && acc < 0.0 { 0.0 } else { acc };
                }
            }
            activations.push(ValueGrid::matrix(batch, layer.out_dim, out)?);
        }
        let output = activations.last().expect("non-empty").clone();
        Ok((output, ForwardTrace { activations }))
    }

    /// Backpropagates `d_output` (gradient of a scalar loss w.r.t. the stack
    /// output) through the recorded forward pass.
    ///
    /// Returns parameter gradients and the gradient w.r.t. the input batch.
    /// The trace must come from a forward pass of this stack on the same
    /// batch shape.
    pub fn backward(&self, trace: &ForwardTrace, d_output: &ValueGrid) -> Result<(StackGrads, ValueGrid)> {
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(CoreError::Shape(format!(
                "trace has {} activations, stack with {} layers needs {}",
                trace.activations.len(),
                self.layers.len(),
                self.layers.len() + 1
            )));
        }
        let batch = trace.activations[0].rows();
        if d_output.rows() != batch || d_output.cols() != self.out_dim() {
            return Err(CoreError::Shape(format!(
                "d_output is {}x{}, expected {batch}x{}",
                d_output.rows(),
                d_output.cols(),
                self.out_dim()
            )));
        }
        let mut grads = StackGrads::zeros_like(self);
        let mut d_next = d_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.activations[i];
            let a = &trace.activations[i + 1];
            if x.cols() != layer.in_dim || a.cols() != layer.out_dim {
                return Err(CoreError::Shape(format!(
                    "trace does not match stack at layer {i}"
                )));
            }
            let lg = &mut grads.layers[i];
            let mut d_input = vec![0.0; batch * layer.in_dim];
            for b in 0..batch {
                let x_row = x.row(b);
                let a_row = a.row(b);
                let d_row = d_next.row(b);
                let d_in_row = &mut d_input[b * layer.in_dim..(b + 1) * layer.in_dim];
                for o in 0..layer.out_dim {
                    // ReLU output is positive iff its pre-activation was.
                    let dz = if layer.relu && a_row[o] <= 0.0 { 0.0 } else { d_row[o] };
                    if dz == 0.0 {
                        continue;
                    }
                    lg.d_bias[o] += dz;
                    let w_row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    let g_row = &mut lg.d_weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for i_in in 0..layer.in_dim {
                        g_row[i_in] += dz * x_row[i_in];
                        d_in_row[i_in] += dz * w_row[i_in];
                    }
                }
            }
            d_next = ValueGrid::matrix(batch, layer.in_dim, d_input)?;
        }
        Ok((grads, d_next))
    }
}

/// Relative-error floor: keeps the ratio meaningful when the analytic
/// gradient is exactly zero and the central difference carries only
/// floating-point noise.
const GRAD_CHECK_EPS: f64 = 1e-6;

/// Compares analytic gradients against central finite differences of `f`.
///
/// Returns the maximum over parameters of
/// `|analytic - (f(p+h) - f(p-h)) / 2h| / (|analytic| + eps)`.
/// `f` must be a pure function of the parameter vector.
pub fn grad_check<F>(mut f: F, params: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(CoreError::Shape(format!(
            "{} parameters but {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(CoreError::Config(format!("step must be positive, got {step}")));
    }
    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..work.len() {
        let orig = work[i];
        work[i] = orig + step;
        let up = f(&work)?;
        work[i] = orig - step;
        let down = f(&work)?;
        work[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(CoreError::Numeric(format!(
                "objective non-finite near parameter {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + GRAD_CHECK_EPS);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Heavy-ball SGD state: one velocity entry per parameter, in the model's
/// flat parameter order.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub momentum: f64,
    pub lr: f64,
    velocity: Vec<f64>,
}

impl OptimState {
    pub fn new(param_count: usize, momentum: f64, lr: f64) -> Self {
        Self {
            momentum,
            lr,
            velocity: vec![0.0; param_count],
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

/// One heavy-ball update: `v <- momentum * v + g`, then `p <- p - lr * v`.
pub fn sgd_momentum_step(params: &mut [f64], grads: &[f64], state: &mut OptimState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(CoreError::Shape(format!(
            "params/grads/velocity lengths differ: {}/{}/{}",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
        return Err(CoreError::Numeric(format!(
            "non-finite gradient at flat index {pos}"
        )));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        *v = state.momentum * *v + g;
        *p -= state.lr * *v;
    }
    Ok(())
}

/// Step-decay learning-rate schedule: the base rate is multiplied by every
/// milestone factor whose epoch has been reached.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    /// `(epoch, factor)` pairs; the factor applies from that epoch onward.
    pub milestones: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn new(base: f64, milestones: Vec<(usize, f64)>) -> Self {
        Self { base, milestones }
    }

    pub fn constant(base: f64) -> Self {
        Self {
            base,
            milestones: Vec::new(),
        }
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let mut lr = self.base;
        for &(at, factor) in &self.milestones {
            if epoch >= at {
                lr *= factor;
            }
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn grid(rows: usize, cols: usize, data: &[f64]) -> ValueGrid {
        ValueGrid::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_layer_replays_input() {
        let layer = DenseLayer::from_parts(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, 2, false).unwrap();
        let stack = LayerStack::new(vec![layer]).unwrap();
        let x = grid(2, 2, &[1.5, -2.0, 0.0, 3.0]);
        let y = stack.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn single_affine_layer_evaluates() {
        let layer = DenseLayer::from_parts(vec![3.0], vec![1.0], 1, 1, false).unwrap();
        let stack = LayerStack::new(vec![layer]).unwrap();
        let y = stack.forward(&grid(1, 1, &[2.0])).unwrap();
        assert_eq!(y.at(0, 0), 7.0);
    }

    #[test]
    fn relu_clamps_negative_preactivations() {
        let layer = DenseLayer::from_parts(vec![1.0, -1.0], vec![0.0, 0.0], 1, 2, true).unwrap();
        let stack = LayerStack::new(vec![layer]).unwrap();
        let y = stack.forward(&grid(1, 1, &[2.0])).unwrap();
        assert_eq!(y.row(0), &[2.0, 0.0]);
    }

    /// Oracle: the same two-layer net evaluated with straight-line arithmetic.
    #[test]
    fn two_layer_forward_matches_hand_evaluation() {
        let l0 = DenseLayer::from_parts(vec![1.0, 2.0, -1.0, 0.5], vec![0.1, -0.2], 2, 2, true).unwrap();
        let l1 = DenseLayer::from_parts(vec![0.3, -0.7], vec![0.05], 2, 1, false).unwrap();
        let stack = LayerStack::new(vec![l0, l1]).unwrap();
        let x = [0.4, -1.3];
        let h0 = (1.0 * x[0] + 2.0 * x[1] + 0.1).max(0.0);
        let h1 = (-1.0 * x[0] + 0.5 * x[1] - 0.2).max(0.0);
        let expect = 0.3 * h0 - 0.7 * h1 + 0.05;
        let y = stack.forward(&grid(1, 2, &x)).unwrap();
        assert_eq!(y.at(0, 0), expect);
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let stack = LayerStack::init_relu_net(&[3, 2], &mut seed::rng(0)).unwrap();
        let err = stack.forward(&grid(1, 2, &[0.0, 0.0])).unwrap_err();
        assert!(matches!(err, CoreError::Shape(_)));
    }

    #[test]
    fn forward_is_pure() {
        let stack = LayerStack::init_relu_net(&[4, 5, 3], &mut seed::rng(11)).unwrap();
        let mut rng = seed::rng(12);
        let x = grid(3, 4, &(0..12).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let a = stack.forward(&x).unwrap();
        let b = stack.forward(&x).unwrap();
        let bits =
            |g: &ValueGrid| g.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn backward_scalar_chain() {
        // y = w1 * (w0 * x), x = 1, w0 = 2, w1 = 3.
        let l0 = DenseLayer::from_parts(vec![2.0], vec![0.0], 1, 1, false).unwrap();
        let l1 = DenseLayer::from_parts(vec![3.0], vec![0.0], 1, 1, false).unwrap();
        let stack = LayerStack::new(vec![l0, l1]).unwrap();
        let (_, trace) = stack.forward_traced(&grid(1, 1, &[1.0])).unwrap();
        let (grads, d_input) = stack.backward(&trace, &grid(1, 1, &[1.0])).unwrap();
        assert_eq!(grads.layers[1].d_weights, vec![2.0]); // hidden activation
        assert_eq!(grads.layers[1].d_bias, vec![1.0]);
        assert_eq!(grads.layers[0].d_weights, vec![3.0]); // w1 * x
        assert_eq!(d_input.at(0, 0), 6.0); // w1 * w0
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let stack = LayerStack::init_relu_net(&[3, 4, 2], &mut seed::rng(5)).unwrap();
        let x = grid(2, 3, &[0.3, -0.2, 0.9, 1.0, 0.0, -0.4]);
        let (_, trace) = stack.forward_traced(&x).unwrap();
        let (grads, d_input) = stack.backward(&trace, &ValueGrid::zeros(2, 2)).unwrap();
        for l in &grads.layers {
            assert!(l.d_weights.iter().all(|&g| g == 0.0));
            assert!(l.d_bias.iter().all(|&g| g == 0.0));
        }
        assert!(d_input.data().iter().all(|&g| g == 0.0));
    }

    /// Backward agrees with central finite differences on a random net, for
    /// the scalar objective `sum(c_j * output_j)` over a small batch.
    #[test]
    fn backward_matches_finite_differences() {
        for trial in 0..5u64 {
            let mut rng = seed::rng(100 + trial);
            let stack = LayerStack::init_relu_net(&[3, 6, 4], &mut rng).unwrap();
            let x = grid(
                2,
                3,
                &(0..6).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(),
            );
            let coef: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d_out = grid(2, 4, &coef);

            let (_, trace) = stack.forward_traced(&x).unwrap();
            let (grads, _) = stack.backward(&trace, &d_out).unwrap();
            let mut analytic = Vec::new();
            grads.append_flat(&mut analytic);

            let mut params = Vec::new();
            stack.append_params(&mut params);
            let objective = |p: &[f64]| -> Result<f64> {
                let mut s = stack.clone();
                let mut cursor = p;
                s.load_params(&mut cursor)?;
                let y = s.forward(&x)?;
                Ok(y.data().iter().zip(&coef).map(|(v, c)| v * c).sum())
            };
            let worst = grad_check(objective, &params, &analytic, 1e-5).unwrap();
            assert!(worst < 1e-7, "trial {trial}: relative error {worst}");
        }
    }

    #[test]
    fn grad_check_rejects_bad_step() {
        let err = grad_check(|_| Ok(0.0), &[1.0], &[0.0], 0.0).unwrap_err();
        assert!(matches!(err, CoreError::Config(_)));
    }

    #[test]
    fn grad_check_quadratic_is_tight() {
        let params = [0.7, -0.3, 2.0];
        let analytic: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
        let f = |p: &[f64]| Ok(p.iter().map(|v| v * v).sum());
        let worst = grad_check(f, &params, &analytic, 1e-5).unwrap();
        assert!(worst < 1e-8, "relative error {worst}");
    }

    #[test]
    fn grad_check_constant_objective_is_exact() {
        let worst = grad_check(|_| Ok(3.5), &[1.0, 2.0], &[0.0, 0.0], 1e-5).unwrap();
        assert_eq!(worst, 0.0);
    }

    #[test]
    fn sgd_zero_gradient_zero_velocity_is_identity() {
        let mut params = vec![1.0, -2.0];
        let mut state = OptimState::new(2, 0.9, 0.1);
        sgd_momentum_step(&mut params, &[0.0, 0.0], &mut state).unwrap();
        assert_eq!(params, vec![1.0, -2.0]);
    }

    #[test]
    fn sgd_two_steps_accumulate_momentum() {
        // v1 = 1, p1 = -0.1; v2 = 1.9, p2 = -0.29.
        let mut params = vec![0.0];
        let mut state = OptimState::new(1, 0.9, 0.1);
        sgd_momentum_step(&mut params, &[1.0], &mut state).unwrap();
        assert!((params[0] + 0.1).abs() < 1e-15);
        assert!((state.velocity()[0] - 1.0).abs() < 1e-15);
        sgd_momentum_step(&mut params, &[1.0], &mut state).unwrap();
        assert!((params[0] + 0.29).abs() < 1e-15);
        assert!((state.velocity()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let mut params = vec![0.0];
        let mut state = OptimState::new(1, 0.9, 0.1);
        let err = sgd_momentum_step(&mut params, &[f64::NAN], &mut state).unwrap_err();
        assert!(matches!(err, CoreError::Numeric(_)));
    }

    #[test]
    fn lr_schedule_applies_cumulative_factors() {
        let sched = LrSchedule::new(0.1, vec![(120, 0.01), (160, 0.01)]);
        assert_eq!(sched.lr_at_epoch(0), 0.1);
        assert_eq!(sched.lr_at_epoch(119), 0.1);
        assert!((sched.lr_at_epoch(130) - 1e-3).abs() < 1e-15);
        assert!((sched.lr_at_epoch(170) - 1e-5).abs() < 1e-16);
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let a = LayerStack::init_relu_net(&[8, 16, 4], &mut seed::rng(7)).unwrap();
        let b = LayerStack::init_relu_net(&[8, 16, 4], &mut seed::rng(7)).unwrap();
        assert_eq!(a, b);
        let c = LayerStack::init_relu_net(&[8, 16, 4], &mut seed::rng(8)).unwrap();
        assert_ne!(a, c);
        let limit0 = (6.0f64 / 8.0).sqrt();
        assert!(a.layers()[0].weights.iter().all(|w| w.abs() < limit0));
        assert!(a.layers()[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn param_roundtrip_preserves_stack() {
        let stack = LayerStack::init_relu_net(&[5, 7, 3], &mut seed::rng(21)).unwrap();
        let mut flat = Vec::new();
        stack.append_params(&mut flat);
        assert_eq!(flat.len(), stack.param_count());
        let mut other = LayerStack::init_relu_net(&[5, 7, 3], &mut seed::rng(99)).unwrap();
        let mut cursor = flat.as_slice();
        other.load_params(&mut cursor).unwrap();
        assert!(cursor.is_empty());
        assert_eq!(stack, other);
    }

    #[test]
    fn macs_count_dense_links_only() {
        let stack = LayerStack::init_relu_net(&[10, 20, 5], &mut seed::rng(1)).unwrap();
        assert_eq!(stack.macs_per_instance(), 10 * 20 + 20 * 5);
    }
}
