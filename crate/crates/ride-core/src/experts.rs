//! Shared-backbone multi-expert models: a common feature trunk feeding
//! several width-reduced classifier heads whose mean logits form the
//! ensemble.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// In no_std builds the math methods come from the Float trait; std test
// builds resolve them as inherent methods and would flag the import.
#[cfg(not(test))]
use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::grid::ValueGrid;
use crate::net::{ForwardTrace, LayerStack, StackGrads};
use crate::numeric;
use crate::seed;

/// Architecture of a multi-expert model.
///
/// The reference architecture is the dense stack
/// `in_dim -> hidden_dims... -> classes` with ReLU between layers. The first
/// `shared_layers` of it become the backbone; the remaining layers are
/// duplicated per expert with hidden widths scaled by `width_factor`
/// (the class output width is never scaled).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub classes: usize,
    pub n_experts: usize,
    pub width_factor: f64,
    /// Number of reference layers shared by all experts. `None` picks
    /// `ceil(L / 2)` where `L = hidden_dims.len() + 1` is the reference layer
    /// count. Must leave at least the final layer to the heads.
    pub shared_layers: Option<usize>,
    pub seed: u64,
}

impl ModelConfig {
    /// Reference layer count (affine layers in the unsplit architecture).
    pub fn reference_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    /// Effective split point after applying the default.
    pub fn resolved_shared_layers(&self) -> usize {
        self.shared_layers.unwrap_or(self.reference_layers().div_ceil(2))
    }

    /// Widths of the full reference stack, input and output included.
    fn reference_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.in_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.classes);
        dims
    }

    /// Multiply-accumulates of the full-width single-expert reference model.
    pub fn reference_macs(&self) -> u64 {
        self.reference_dims()
            .windows(2)
            .map(|w| (w[0] * w[1]) as u64)
            .sum()
    }

    /// Single-expert configuration whose parameter count approximates this
    /// one's as closely as the width rounding allows, found by scanning the
    /// head width factor. Used to build parameter-matched baselines.
    pub fn parameter_matched_single(&self) -> Result<ModelConfig> {
        let target = build_model(self)?.param_count();
        let count_for = |wf: f64| -> Result<usize> {
            let cfg = ModelConfig {
                n_experts: 1,
                width_factor: wf,
                ..self.clone()
            };
            Ok(build_model(&cfg)?.param_count())
        };
        // Parameter count is monotone in the width factor; bisect, then take
        // whichever bracket end lands closer.
        let (mut lo, mut hi) = (0.05, 64.0);
        if count_for(hi)? < target {
            return Err(CoreError::Config(
                "parameter matching would need an oversized head".into(),
            ));
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if count_for(mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let best = if target.abs_diff(count_for(lo)?) <= target.abs_diff(count_for(hi)?) {
            lo
        } else {
            hi
        };
        Ok(ModelConfig {
            n_experts: 1,
            width_factor: best,
            ..self.clone()
        })
    }
}

/// Shared backbone plus per-expert heads.
#[derive(Debug, Clone, PartialEq)]
pub struct RideModel {
    backbone: LayerStack,
    heads: Vec<LayerStack>,
    width_factor: f64,
    shared_layers: usize,
}

/// Per-layer activations for one traced model forward pass.
#[derive(Debug, Clone)]
pub struct ModelTrace {
    pub backbone: ForwardTrace,
    pub heads: Vec<ForwardTrace>,
}

/// Parameter gradients for every stack of the model, in flat-parameter order
/// (backbone first, then each head).
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub backbone: StackGrads,
    pub heads: Vec<StackGrads>,
}

impl ModelGrads {
    pub fn zeros_like(model: &RideModel) -> Self {
        Self {
            backbone: StackGrads::zeros_like(&model.backbone),
            heads: model.heads.iter().map(StackGrads::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        self.backbone.add_assign(&other.backbone);
        assert_eq!(self.heads.len(), other.heads.len(), "head count");
        for (a, b) in self.heads.iter_mut().zip(&other.heads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.backbone.scale(factor);
        for h in &mut self.heads {
            h.scale(factor);
        }
    }

    /// Flat gradient vector in the model's parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.backbone.append_flat(&mut out);
        for h in &self.heads {
            h.append_flat(&mut out);
        }
        out
    }
}

/// Builds the model from its architecture description, initializing the
/// backbone and each head from seeds derived per component, so every expert
/// starts different.
pub fn build_model(config: &ModelConfig) -> Result<RideModel> {
    if config.in_dim == 0 {
        return Err(CoreError::Config("in_dim must be positive".into()));
    }
    if config.classes < 2 {
        return Err(CoreError::Config(format!(
            "need at least two classes, got {}",
            config.classes
        )));
    }
    if config.n_experts == 0 {
        return Err(CoreError::Config("need at least one expert".into()));
    }
    if !config.width_factor.is_finite() || config.width_factor <= 0.0 {
        return Err(CoreError::Config(format!(
            "width factor must be positive, got {}",
            config.width_factor
        )));
    }
    if config.hidden_dims.iter().any(|&h| h == 0) {
        return Err(CoreError::Config("zero hidden width".into()));
    }
    let layers = config.reference_layers();
    let shared = config.resolved_shared_layers();
    if shared == 0 || shared >= layers {
        return Err(CoreError::Config(format!(
            "split point {shared} out of range: a {layers}-layer model shares 1..={} layers",
            layers - 1
        )));
    }
    let dims = config.reference_dims();
    let backbone_dims = &dims[..=shared];
    let mut head_dims = Vec::with_capacity(layers - shared + 1);
    head_dims.push(dims[shared]);
    for &h in &dims[shared + 1..layers] {
        let scaled = (config.width_factor * h as f64).round() as usize;
        if scaled == 0 {
            return Err(CoreError::Config(format!(
                "width factor {} collapses a hidden layer of width {h}",
                config.width_factor
            )));
        }
        head_dims.push(scaled);
    }
    head_dims.push(config.classes);

    // The backbone ends mid-net, so every backbone layer keeps its ReLU.
    let mut backbone_rng = seed::rng(seed::derive(config.seed, 0));
    let backbone_layers = backbone_dims
        .windows(2)
        .map(|w| crate::net::DenseLayer::init(w[0], w[1], true, &mut backbone_rng))
        .collect();
    let backbone = LayerStack::new(backbone_layers)?;

    let heads = (0..config.n_experts)
        .map(|i| {
            let mut rng = seed::rng(seed::derive(config.seed, 1 + i as u64));
            LayerStack::init_relu_net(&head_dims, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RideModel {
        backbone,
        heads,
        width_factor: config.width_factor,
        shared_layers: shared,
    })
}

/// Per-expert logits for one batch, with cached prefix means.
#[derive(Debug, Clone)]
pub struct ExpertOutput {
    per_expert: Vec<ValueGrid>,
    prefix_means: Vec<ValueGrid>,
}

impl ExpertOutput {
    fn from_logits(per_expert: Vec<ValueGrid>) -> Self {
        let rows = per_expert[0].rows();
        let cols = per_expert[0].cols();
        let mut prefix_means = Vec::with_capacity(per_expert.len());
        let mut running = vec![0.0; rows * cols];
        for (k, logits) in per_expert.iter().enumerate() {
            for (acc, v) in running.iter_mut().zip(logits.data()) {
                *acc += v;
            }
            let scale = 1.0 / (k as f64 + 1.0);
            let mean: Vec<f64> = running.iter().map(|&s| s * scale).collect();
            prefix_means.push(ValueGrid::matrix(rows, cols, mean).expect("finite"));
        }
        Self {
            per_expert,
            prefix_means,
        }
    }

    /// Builds the output record from externally computed per-expert logits.
    /// All grids must share one shape.
    pub fn from_expert_logits(per_expert: Vec<ValueGrid>) -> Result<Self> {
        let first = per_expert
            .first()
            .ok_or_else(|| CoreError::Config("need at least one expert".into()))?;
        let (rows, cols) = (first.rows(), first.cols());
        if per_expert.iter().any(|g| g.rows() != rows || g.cols() != cols) {
            return Err(CoreError::Shape("expert logit shapes differ".into()));
        }
        Ok(Self::from_logits(per_expert))
    }

    pub fn n_experts(&self) -> usize {
        self.per_expert.len()
    }

    pub fn batch(&self) -> usize {
        self.per_expert[0].rows()
    }

    pub fn classes(&self) -> usize {
        self.per_expert[0].cols()
    }

    pub fn expert(&self, i: usize) -> &ValueGrid {
        &self.per_expert[i]
    }

    /// Mean logits of the first `m` experts (`1 <= m <= n`).
    pub fn mean_prefix(&self, m: usize) -> &ValueGrid {
        assert!(
            m >= 1 && m <= self.per_expert.len(),
            "prefix length {m} out of range 1..={}",
            self.per_expert.len()
        );
        &self.prefix_means[m - 1]
    }

    /// Mean logits over all experts.
    pub fn full_mean(&self) -> &ValueGrid {
        self.mean_prefix(self.n_experts())
    }
}

impl RideModel {
    pub fn n_experts(&self) -> usize {
        self.heads.len()
    }

    pub fn in_dim(&self) -> usize {
        self.backbone.in_dim()
    }

    pub fn classes(&self) -> usize {
        self.heads[0].out_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.out_dim()
    }

    pub fn width_factor(&self) -> f64 {
        self.width_factor
    }

    pub fn shared_layers(&self) -> usize {
        self.shared_layers
    }

    pub fn backbone(&self) -> &LayerStack {
        &self.backbone
    }

    pub fn heads(&self) -> &[LayerStack] {
        &self.heads
    }

    /// Backbone features for a batch.
    pub fn features(&self, batch: &ValueGrid) -> Result<ValueGrid> {
        self.backbone.forward(batch)
    }

    /// Logits of expert `i` alone.
    pub fn expert_logits(&self, batch: &ValueGrid, i: usize) -> Result<ValueGrid> {
        if i >= self.heads.len() {
            return Err(CoreError::Config(format!(
                "expert {i} out of range ({} experts)",
                self.heads.len()
            )));
        }
        self.heads[i].forward(&self.features(batch)?)
    }

    /// Logits of every expert, evaluating the backbone once and reusing the
    /// features across heads.
    pub fn expert_outputs(&self, batch: &ValueGrid) -> Result<ExpertOutput> {
        let features = self.features(batch)?;
        let per_expert = self
            .heads
            .iter()
            .map(|h| h.forward(&features))
            .collect::<Result<Vec<_>>>()?;
        Ok(ExpertOutput::from_logits(per_expert))
    }

    /// Softmax of the mean logits of the first `m` experts.
    pub fn ensemble_probs(&self, batch: &ValueGrid, m: usize) -> Result<ValueGrid> {
        if m == 0 || m > self.heads.len() {
            return Err(CoreError::Config(format!(
                "ensemble size {m} out of range 1..={}",
                self.heads.len()
            )));
        }
        let outputs = self.expert_outputs(batch)?;
        Ok(numeric::softmax_rows(outputs.mean_prefix(m)))
    }

    /// Forward pass recording every activation, for backprop.
    pub fn forward_traced(&self, batch: &ValueGrid) -> Result<(ExpertOutput, ModelTrace)> {
        let (features, backbone_trace) = self.backbone.forward_traced(batch)?;
        let mut per_expert = Vec::with_capacity(self.heads.len());
        let mut head_traces = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let (logits, trace) = h.forward_traced(&features)?;
            per_expert.push(logits);
            head_traces.push(trace);
        }
        Ok((
            ExpertOutput::from_logits(per_expert),
            ModelTrace {
                backbone: backbone_trace,
                heads: head_traces,
            },
        ))
    }

    /// Backpropagates per-expert logit gradients through heads and backbone.
    ///
    /// `d_logits[i]` is the gradient of the scalar objective w.r.t. expert
    /// `i`'s logits; the backbone accumulates every head's feature gradient.
    pub fn backward(&self, trace: &ModelTrace, d_logits: &[ValueGrid]) -> Result<ModelGrads> {
        if d_logits.len() != self.heads.len() {
            return Err(CoreError::Shape(format!(
                "{} logit gradients for {} experts",
                d_logits.len(),
                self.heads.len()
            )));
        }
        let batch = trace.backbone.input().rows();
        let mut d_features = ValueGrid::zeros(batch, self.feature_dim());
        let mut head_grads = Vec::with_capacity(self.heads.len());
        for (i, head) in self.heads.iter().enumerate() {
            let (grads, d_feat) = head.backward(&trace.heads[i], &d_logits[i])?;
            head_grads.push(grads);
            for (acc, v) in d_features.data_mut().iter_mut().zip(d_feat.data()) {
                *acc += v;
            }
        }
        let (backbone_grads, _) = self.backbone.backward(&trace.backbone, &d_features)?;
        Ok(ModelGrads {
            backbone: backbone_grads,
            heads: head_grads,
        })
    }

    pub fn param_count(&self) -> usize {
        self.backbone.param_count() + self.heads.iter().map(|h| h.param_count()).sum::<usize>()
    }

    /// Flat parameter vector: backbone first, then each head in order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.backbone.append_params(&mut out);
        for h in &self.heads {
            h.append_params(&mut out);
        }
        out
    }

    /// Loads a flat parameter vector produced by [`RideModel::params`].
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(CoreError::Shape(format!(
                "{} parameters supplied, model has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut cursor = flat;
        self.backbone.load_params(&mut cursor)?;
        for h in &mut self.heads {
            h.load_params(&mut cursor)?;
        }
        Ok(())
    }

    /// Multiply-accumulates of the shared backbone, per instance.
    pub fn macs_shared(&self) -> u64 {
        self.backbone.macs_per_instance()
    }

    /// Multiply-accumulates of one expert head, per instance.
    pub fn macs_per_head(&self) -> u64 {
        self.heads[0].macs_per_instance()
    }
}
