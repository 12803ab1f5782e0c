//! Run configuration: a strict JSON schema, default resolution, and the
//! mapping onto core types.
//!
//! Configs are read with unknown-key rejection so a typo in a hyperparameter
//! name fails loudly instead of silently training with a default. `resolve`
//! materializes every optional field; the resolved struct is written next to
//! the run artifacts and, fed back through `--config` with no flags, replays
//! the run bit-identically.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ride_core::data::{CIFAR_CLASSES, CIFAR_PIXELS, DEFAULT_FEW_MAX, DEFAULT_MANY_MIN};
use ride_core::distill::{DEFAULT_KD_TEMPERATURE, DEFAULT_KD_WEIGHT};
use ride_core::experts::ModelConfig;
use ride_core::losses::{
    LossConfig, LossKind, TemperatureSchedule, DEFAULT_DRW_BETA, DEFAULT_FOCAL_GAMMA,
    DEFAULT_LAMBDA, DEFAULT_LDAM_MAX_MARGIN, DEFAULT_LDAM_SCALE, DEFAULT_TEMP_ALPHA,
    DEFAULT_TEMP_FLOOR, DEFAULT_TEMP_GAMMA,
};
use ride_core::net::LrSchedule;
use ride_core::router::{
    RouterConfig, RouterTrainConfig, RoutingLabelMode, DEFAULT_OMEGA_ON, DEFAULT_ROUTER_HIDDEN,
    DEFAULT_ROUTER_TOP_S, DEFAULT_THRESHOLD,
};
use ride_core::seed;
use ride_core::train::{TrainConfig, DEFAULT_MOMENTUM};

use crate::errors::{open_err, LabError, Result};

/// Seed streams fanned out from the master seed. Model initialization and
/// shuffling derive from the master so `--seed` varies them, while dataset
/// draws derive from `data_seed`, which resolves once and then stays pinned
/// in the resolved config; paired comparisons vary `--seed` against fixed
/// data.
pub const STREAM_DATA: u64 = 1;
pub const STREAM_MODEL: u64 = 2;
pub const STREAM_TRAIN: u64 = 3;
pub const STREAM_ROUTER_INIT: u64 = 4;
pub const STREAM_ROUTER_TRAIN: u64 = 5;
pub const STREAM_METHOD: u64 = 6;

/// Streams fanned out from `data_seed`.
pub const DATA_STREAM_MIXTURE: u64 = 1;
pub const DATA_STREAM_TRAIN: u64 = 2;
pub const DATA_STREAM_TEST: u64 = 3;
pub const DATA_STREAM_BASE: u64 = 4;
pub const DATA_STREAM_REPLICATES: u64 = 5;

fn default_output_dir() -> Option<PathBuf> {
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub temperatures: TempSection,
    #[serde(default)]
    pub router: RouterSection,
    #[serde(default)]
    pub distill: Option<DistillSection>,
    pub train: TrainSection,
    /// Replicate count for bias/variance studies.
    #[serde(default)]
    pub replicates: Option<usize>,
    /// Methods compared by the bias/variance command; empty means a single
    /// method built from the sections above.
    #[serde(default)]
    pub methods: Vec<MethodSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetConfig {
    Synthetic(SyntheticDataset),
    Cifar(CifarDataset),
}

fn default_separation() -> f64 {
    3.0
}
fn default_imbalance() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDataset {
    pub classes: usize,
    pub dim: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Training count of the most frequent class.
    pub n_max: usize,
    #[serde(default = "default_imbalance")]
    pub imbalance: f64,
    /// Size of the balanced base pool that replicate studies subsample;
    /// defaults to twice `n_max` per class.
    #[serde(default)]
    pub base_per_class: Option<usize>,
    pub test_per_class: usize,
    /// `(many_min, few_max)` class-count thresholds; defaults to (100, 20).
    #[serde(default)]
    pub shot_thresholds: Option<(usize, usize)>,
    /// Seed for every dataset draw; defaults to a stream derived from the
    /// master seed and is pinned once resolved.
    #[serde(default)]
    pub data_seed: Option<u64>,
    /// Also write the drawn datasets as CSV next to the run artifacts.
    #[serde(default)]
    pub export_csv: bool,
}

fn default_cifar_n_max() -> Option<usize> {
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CifarDataset {
    /// Training split in the public 100-class binary layout, resolved
    /// against `RIDE_LAB_DATA` when relative.
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    #[serde(default = "default_cifar_n_max")]
    pub n_max: Option<usize>,
    #[serde(default = "default_imbalance")]
    pub imbalance: f64,
    #[serde(default)]
    pub shot_thresholds: Option<(usize, usize)>,
    #[serde(default)]
    pub data_seed: Option<u64>,
    #[serde(default)]
    pub export_csv: bool,
}

fn default_width_factor() -> f64 {
    0.75
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden widths of the full-width reference stack.
    pub hidden: Vec<usize>,
    pub n_experts: usize,
    #[serde(default = "default_width_factor")]
    pub width_factor: f64,
    /// Reference layers shared by all experts; defaults to the first half,
    /// rounded up.
    #[serde(default)]
    pub shared_layers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKindName {
    Ce,
    LdamDrw,
    Focal,
}

fn default_loss_kind() -> LossKindName {
    LossKindName::LdamDrw
}
fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn default_ldam_max_margin() -> f64 {
    DEFAULT_LDAM_MAX_MARGIN
}
fn default_ldam_scale() -> f64 {
    DEFAULT_LDAM_SCALE
}
fn default_drw_beta() -> f64 {
    DEFAULT_DRW_BETA
}
fn default_focal_gamma() -> f64 {
    DEFAULT_FOCAL_GAMMA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    #[serde(default = "default_loss_kind")]
    pub kind: LossKindName,
    /// Diversity weight.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Raw margin scale; `null` keeps the normalized-margin mode where the
    /// rarest class gets exactly `ldam_max_margin`.
    #[serde(default)]
    pub ldam_c: Option<f64>,
    #[serde(default = "default_ldam_max_margin")]
    pub ldam_max_margin: f64,
    #[serde(default = "default_ldam_scale")]
    pub ldam_scale: f64,
    /// Epoch at which re-weighting switches on; defaults to 80% of the
    /// training epochs.
    #[serde(default)]
    pub drw_start_epoch: Option<usize>,
    #[serde(default = "default_drw_beta")]
    pub drw_beta: f64,
    #[serde(default = "default_focal_gamma")]
    pub focal_gamma: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            kind: default_loss_kind(),
            lambda: default_lambda(),
            ldam_c: None,
            ldam_max_margin: default_ldam_max_margin(),
            ldam_scale: default_ldam_scale(),
            drw_start_epoch: None,
            drw_beta: default_drw_beta(),
            focal_gamma: default_focal_gamma(),
        }
    }
}

fn default_temp_alpha() -> f64 {
    DEFAULT_TEMP_ALPHA
}
fn default_temp_gamma() -> f64 {
    DEFAULT_TEMP_GAMMA
}
fn default_temp_floor() -> f64 {
    DEFAULT_TEMP_FLOOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TempSection {
    #[serde(default = "default_temp_alpha")]
    pub alpha: f64,
    #[serde(default = "default_temp_gamma")]
    pub gamma: f64,
    #[serde(default = "default_temp_floor")]
    pub floor: f64,
    /// First epoch with the diversity term active; defaults to the resolved
    /// re-weighting start.
    #[serde(default)]
    pub start_epoch: Option<usize>,
}

impl Default for TempSection {
    fn default() -> Self {
        TempSection {
            alpha: default_temp_alpha(),
            gamma: default_temp_gamma(),
            floor: default_temp_floor(),
            start_epoch: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelModeName {
    /// Correctness judged on the running prefix ensemble.
    #[default]
    CumulativePrefix,
    /// Correctness judged on each expert alone.
    IndividualExpert,
}

fn default_router_hidden() -> usize {
    DEFAULT_ROUTER_HIDDEN
}
fn default_omega_on() -> f64 {
    DEFAULT_OMEGA_ON
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_router_epochs() -> usize {
    40
}
fn default_router_lr() -> f64 {
    0.05
}
fn default_momentum() -> f64 {
    DEFAULT_MOMENTUM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterSection {
    #[serde(default = "default_router_hidden")]
    pub hidden: usize,
    /// Logit components fed to the gates; defaults to `min(30, classes)`.
    #[serde(default)]
    pub top_s: Option<usize>,
    #[serde(default = "default_omega_on")]
    pub omega_on: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_router_epochs")]
    pub epochs: usize,
    /// Defaults to the stage-1 batch size.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_router_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub label_mode: LabelModeName,
}

impl Default for RouterSection {
    fn default() -> Self {
        RouterSection {
            hidden: default_router_hidden(),
            top_s: None,
            omega_on: default_omega_on(),
            threshold: default_threshold(),
            epochs: default_router_epochs(),
            batch_size: None,
            lr: default_router_lr(),
            momentum: default_momentum(),
            label_mode: LabelModeName::default(),
        }
    }
}

fn default_kd_temperature() -> f64 {
    DEFAULT_KD_TEMPERATURE
}
fn default_kd_weight() -> f64 {
    DEFAULT_KD_WEIGHT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    #[serde(default = "default_kd_temperature")]
    pub temperature: f64,
    #[serde(default = "default_kd_weight")]
    pub weight: f64,
    /// Teacher model checkpoint, resolved relative to the working directory.
    pub teacher: PathBuf,
}

fn default_lr() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// `(epoch, factor)` milestones; factors compound once their epoch is
    /// reached.
    #[serde(default)]
    pub lr_decays: Vec<(usize, f64)>,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

/// One arm of a bias/variance comparison: the main config with a few fields
/// overridden. Absent fields inherit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub name: String,
    #[serde(default)]
    pub n_experts: Option<usize>,
    #[serde(default)]
    pub width_factor: Option<f64>,
    /// Replace the width factor with one that matches the main model's
    /// parameter count (single-expert baselines).
    #[serde(default)]
    pub parameter_match: bool,
    #[serde(default)]
    pub loss: Option<LossSection>,
    #[serde(default)]
    pub temperatures: Option<TempSection>,
}

/// Command-line values layered over the config file before resolution.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threshold: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| open_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            LabError::Config(format!("{} does not parse: {e}", path.display()))
        })
    }

    pub fn classes(&self) -> usize {
        match &self.dataset {
            DatasetConfig::Synthetic(s) => s.classes,
            DatasetConfig::Cifar(_) => CIFAR_CLASSES,
        }
    }

    pub fn in_dim(&self) -> usize {
        match &self.dataset {
            DatasetConfig::Synthetic(s) => s.dim,
            DatasetConfig::Cifar(_) => CIFAR_PIXELS,
        }
    }

    pub fn data_seed(&self) -> u64 {
        let stored = match &self.dataset {
            DatasetConfig::Synthetic(s) => s.data_seed,
            DatasetConfig::Cifar(c) => c.data_seed,
        };
        stored.unwrap_or_else(|| seed::derive(self.seed, STREAM_DATA))
    }

    pub fn export_csv(&self) -> bool {
        match &self.dataset {
            DatasetConfig::Synthetic(s) => s.export_csv,
            DatasetConfig::Cifar(c) => c.export_csv,
        }
    }

    /// Output directory after resolution; `resolve` guarantees `Some`.
    pub fn out_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }

    /// Materializes every default and validates the result. Call once, right
    /// after loading.
    pub fn resolve(&mut self, overrides: &CliOverrides) -> Result<()> {
        if let Some(s) = overrides.seed {
            self.seed = s;
        }
        if let Some(out) = &overrides.out {
            self.output_dir = Some(out.clone());
        }
        if self.output_dir.is_none() {
            self.output_dir = Some(PathBuf::from("runs"));
        }
        if let Some(t) = overrides.threshold {
            self.router.threshold = t;
        }

        let data_seed = self.data_seed();
        match &mut self.dataset {
            DatasetConfig::Synthetic(s) => {
                s.data_seed = Some(data_seed);
                s.shot_thresholds =
                    Some(s.shot_thresholds.unwrap_or((DEFAULT_MANY_MIN, DEFAULT_FEW_MAX)));
                s.base_per_class = Some(s.base_per_class.unwrap_or(2 * s.n_max));
            }
            DatasetConfig::Cifar(c) => {
                c.data_seed = Some(data_seed);
                c.shot_thresholds =
                    Some(c.shot_thresholds.unwrap_or((DEFAULT_MANY_MIN, DEFAULT_FEW_MAX)));
                c.n_max = Some(c.n_max.unwrap_or(500));
            }
        }

        let reference_layers = self.model.hidden.len() + 1;
        self.model.shared_layers =
            Some(self.model.shared_layers.unwrap_or(reference_layers.div_ceil(2)));

        let drw_start = self
            .loss
            .drw_start_epoch
            .unwrap_or(self.train.epochs * 4 / 5);
        self.loss.drw_start_epoch = Some(drw_start);
        self.temperatures.start_epoch = Some(self.temperatures.start_epoch.unwrap_or(drw_start));

        self.router.top_s =
            Some(self.router.top_s.unwrap_or(DEFAULT_ROUTER_TOP_S.min(self.classes())));
        self.router.batch_size = Some(self.router.batch_size.unwrap_or(self.train.batch_size));

        self.validate()
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(LabError::Config(msg));
        match &self.dataset {
            DatasetConfig::Synthetic(s) => {
                if s.classes < 2 || s.dim < 2 {
                    return fail(format!(
                        "synthetic data needs at least 2 classes and 2 dims, got {}x{}",
                        s.classes, s.dim
                    ));
                }
                if !(s.separation.is_finite() && s.separation >= 0.0) {
                    return fail(format!("separation must be finite and >= 0, got {}", s.separation));
                }
                if s.test_per_class == 0 {
                    return fail("test_per_class must be positive".into());
                }
                if s.base_per_class.unwrap_or(0) < s.n_max {
                    return fail(format!(
                        "base_per_class {} cannot cover n_max {}",
                        s.base_per_class.unwrap_or(0),
                        s.n_max
                    ));
                }
                validate_profile_inputs(s.n_max, s.imbalance, s.shot_thresholds.unwrap())?;
            }
            DatasetConfig::Cifar(c) => {
                validate_profile_inputs(c.n_max.unwrap(), c.imbalance, c.shot_thresholds.unwrap())?;
            }
        }
        if self.model.hidden.is_empty() {
            return fail("model.hidden must name at least one hidden width".into());
        }
        if self.model.n_experts == 0 {
            return fail("model.n_experts must be positive".into());
        }
        if !(self.model.width_factor.is_finite() && self.model.width_factor > 0.0) {
            return fail(format!(
                "model.width_factor must be finite and positive, got {}",
                self.model.width_factor
            ));
        }
        if !(self.loss.lambda.is_finite() && self.loss.lambda >= 0.0) {
            return fail(format!("loss.lambda must be finite and >= 0, got {}", self.loss.lambda));
        }
        if self.loss.drw_start_epoch.unwrap() > self.train.epochs {
            return fail(format!(
                "loss.drw_start_epoch {} exceeds train.epochs {}",
                self.loss.drw_start_epoch.unwrap(),
                self.train.epochs
            ));
        }
        if !(0.0..1.0).contains(&self.loss.drw_beta) {
            return fail(format!("loss.drw_beta must lie in [0,1), got {}", self.loss.drw_beta));
        }
        if !(self.temperatures.alpha.is_finite() && self.temperatures.alpha > 0.0) {
            return fail(format!(
                "temperatures.alpha must be positive, got {}",
                self.temperatures.alpha
            ));
        }
        if !(0.0..=1.0).contains(&self.temperatures.gamma) {
            return fail(format!(
                "temperatures.gamma must lie in [0,1], got {}",
                self.temperatures.gamma
            ));
        }
        if self.train.batch_size == 0 {
            return fail("train.batch_size must be positive".into());
        }
        if !(self.train.lr.is_finite() && self.train.lr > 0.0) {
            return fail(format!("train.lr must be finite and positive, got {}", self.train.lr));
        }
        if self.router.hidden == 0 || self.router.top_s == Some(0) {
            return fail("router.hidden and router.top_s must be positive".into());
        }
        if self.router.batch_size == Some(0) {
            return fail("router.batch_size must be positive".into());
        }
        if !(self.router.threshold.is_finite()) {
            return fail(format!("router.threshold must be finite, got {}", self.router.threshold));
        }
        if let Some(d) = &self.distill {
            if !(d.temperature.is_finite() && d.temperature > 0.0) {
                return fail(format!(
                    "distill.temperature must be positive, got {}",
                    d.temperature
                ));
            }
            if !(d.weight.is_finite() && d.weight >= 0.0) {
                return fail(format!("distill.weight must be finite and >= 0, got {}", d.weight));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.methods {
            if m.name.is_empty()
                || !m.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return fail(format!(
                    "method name {:?} must be non-empty and use only [A-Za-z0-9_-] (it names files)",
                    m.name
                ));
            }
            if !seen.insert(&m.name) {
                return fail(format!("duplicate method name {:?}", m.name));
            }
            if m.n_experts == Some(0) {
                return fail(format!("method {:?} sets n_experts to 0", m.name));
            }
            if m.parameter_match && m.n_experts.unwrap_or(1) != 1 {
                return fail(format!(
                    "method {:?}: parameter matching only defines a single-expert baseline",
                    m.name
                ));
            }
        }
        Ok(())
    }

    /// The main config with one method's overrides applied. Parameter
    /// matching is resolved by the caller because it needs a built model.
    pub fn with_method(&self, method: &MethodSection) -> RunConfig {
        let mut cfg = self.clone();
        if let Some(n) = method.n_experts {
            cfg.model.n_experts = n;
        }
        if let Some(w) = method.width_factor {
            cfg.model.width_factor = w;
        }
        if let Some(loss) = &method.loss {
            cfg.loss = loss.clone();
            if cfg.loss.drw_start_epoch.is_none() {
                cfg.loss.drw_start_epoch = Some(cfg.train.epochs * 4 / 5);
            }
        }
        if let Some(temps) = &method.temperatures {
            cfg.temperatures = temps.clone();
            if cfg.temperatures.start_epoch.is_none() {
                cfg.temperatures.start_epoch = cfg.loss.drw_start_epoch;
            }
        }
        cfg.methods = Vec::new();
        cfg
    }

    pub fn write_resolved(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| LabError::Data(format!("cannot serialize config: {e}")))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| crate::errors::io_err(path, e))
    }

    pub fn core_model(&self) -> ModelConfig {
        ModelConfig {
            in_dim: self.in_dim(),
            hidden_dims: self.model.hidden.clone(),
            classes: self.classes(),
            n_experts: self.model.n_experts,
            width_factor: self.model.width_factor,
            shared_layers: self.model.shared_layers,
            seed: seed::derive(self.seed, STREAM_MODEL),
        }
    }

    pub fn core_loss(&self) -> LossConfig {
        LossConfig {
            kind: match self.loss.kind {
                LossKindName::Ce => LossKind::CrossEntropy,
                LossKindName::LdamDrw => LossKind::LdamDrw,
                LossKindName::Focal => LossKind::Focal,
            },
            lambda: self.loss.lambda,
            ldam_c: self.loss.ldam_c,
            ldam_max_margin: self.loss.ldam_max_margin,
            ldam_scale: self.loss.ldam_scale,
            drw_start_epoch: self.loss.drw_start_epoch.unwrap_or(self.train.epochs * 4 / 5),
            drw_beta: self.loss.drw_beta,
            focal_gamma: self.loss.focal_gamma,
        }
    }

    pub fn core_temperatures(&self) -> TemperatureSchedule {
        TemperatureSchedule::new(
            self.temperatures.alpha,
            self.temperatures.gamma,
            self.temperatures.floor,
            self.temperatures.start_epoch.unwrap_or(0),
        )
    }

    pub fn core_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            schedule: LrSchedule::new(self.train.lr, self.train.lr_decays.clone()),
            momentum: self.train.momentum,
            seed: seed::derive(self.seed, STREAM_TRAIN),
        }
    }

    pub fn core_router(&self) -> RouterConfig {
        RouterConfig {
            hidden: self.router.hidden,
            top_s: self.router.top_s.unwrap_or(DEFAULT_ROUTER_TOP_S.min(self.classes())),
            omega_on: self.router.omega_on,
            threshold: self.router.threshold,
        }
    }

    pub fn core_router_train(&self) -> RouterTrainConfig {
        RouterTrainConfig {
            epochs: self.router.epochs,
            batch_size: self.router.batch_size.unwrap_or(self.train.batch_size),
            schedule: LrSchedule::constant(self.router.lr),
            momentum: self.router.momentum,
            seed: seed::derive(self.seed, STREAM_ROUTER_TRAIN),
            label_mode: match self.router.label_mode {
                LabelModeName::CumulativePrefix => RoutingLabelMode::CumulativePrefix,
                LabelModeName::IndividualExpert => RoutingLabelMode::IndividualExpert,
            },
        }
    }
}

fn validate_profile_inputs(n_max: usize, imbalance: f64, thresholds: (usize, usize)) -> Result<()> {
    if !(imbalance.is_finite() && imbalance >= 1.0) {
        return Err(LabError::Config(format!(
            "imbalance must be finite and >= 1, got {imbalance}"
        )));
    }
    if (n_max as f64) < imbalance {
        return Err(LabError::Config(format!(
            "n_max {n_max} below imbalance {imbalance} leaves the rarest class empty"
        )));
    }
    if thresholds.0 <= thresholds.1 {
        return Err(LabError::Config(format!(
            "shot thresholds need many_min > few_max, got {thresholds:?}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "dataset": {"synthetic": {"classes": 10, "dim": 16, "n_max": 100,
                        "imbalance": 10.0, "test_per_class": 20}},
            "model": {"hidden": [32, 16], "n_experts": 3},
            "train": {"epochs": 10, "batch_size": 8}
        }"#
        .to_string()
    }

    fn parse(json: &str) -> serde_json::Result<RunConfig> {
        serde_json::from_str(json)
    }

    #[test]
    fn minimal_config_parses_and_resolves() {
        let mut cfg = parse(&minimal_json()).unwrap();
        cfg.resolve(&CliOverrides::default()).unwrap();
        assert_eq!(cfg.classes(), 10);
        assert_eq!(cfg.in_dim(), 16);
        // Every optional field materialized.
        assert_eq!(cfg.output_dir, Some(PathBuf::from("runs")));
        assert_eq!(cfg.model.shared_layers, Some(2));
        assert_eq!(cfg.loss.drw_start_epoch, Some(8));
        assert_eq!(cfg.temperatures.start_epoch, Some(8));
        assert_eq!(cfg.router.top_s, Some(10));
        assert_eq!(cfg.router.batch_size, Some(8));
        match &cfg.dataset {
            DatasetConfig::Synthetic(s) => {
                assert_eq!(s.data_seed, Some(seed::derive(0, STREAM_DATA)));
                assert_eq!(s.shot_thresholds, Some((100, 20)));
                assert_eq!(s.base_per_class, Some(200));
            }
            _ => panic!("expected synthetic"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        let cases = [
            r#"{"dataset": {"synthetic": {"classes": 10, "dim": 16, "n_max": 100,
                "test_per_class": 20}}, "model": {"hidden": [32], "n_experts": 1},
                "train": {"epochs": 1, "batch_size": 8}, "sead": 3}"#,
            r#"{"dataset": {"synthetic": {"classes": 10, "dim": 16, "n_max": 100,
                "test_per_class": 20, "seperation": 2.0}},
                "model": {"hidden": [32], "n_experts": 1},
                "train": {"epochs": 1, "batch_size": 8}}"#,
            r#"{"dataset": {"synthetic": {"classes": 10, "dim": 16, "n_max": 100,
                "test_per_class": 20}}, "model": {"hidden": [32], "n_experts": 1},
                "train": {"epochs": 1, "batch_size": 8, "lr_decay": []}}"#,
            r#"{"dataset": {"synthetic": {"classes": 10, "dim": 16, "n_max": 100,
                "test_per_class": 20}}, "model": {"hidden": [32], "n_experts": 1},
                "train": {"epochs": 1, "batch_size": 8},
                "loss": {"kind": "ldam-drw", "lamda": 0.1}}"#,
        ];
        for json in cases {
            let err = parse(json).unwrap_err().to_string();
            assert!(err.contains("unknown field"), "case did not flag typo: {err}");
        }
    }

    #[test]
    fn resolution_is_idempotent_and_roundtrips_through_json() {
        let mut cfg = parse(&minimal_json()).unwrap();
        cfg.seed = 5;
        cfg.resolve(&CliOverrides::default()).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let mut again: RunConfig = parse(&text).unwrap();
        again.resolve(&CliOverrides::default()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn cli_overrides_win_but_pinned_data_seed_survives_seed_change() {
        let mut cfg = parse(&minimal_json()).unwrap();
        cfg.resolve(&CliOverrides::default()).unwrap();
        let pinned = cfg.data_seed();
        let mut rerun = cfg.clone();
        rerun
            .resolve(&CliOverrides {
                seed: Some(99),
                out: Some(PathBuf::from("elsewhere")),
                threshold: Some(0.25),
            })
            .unwrap();
        assert_eq!(rerun.seed, 99);
        assert_eq!(rerun.data_seed(), pinned);
        assert_eq!(rerun.output_dir, Some(PathBuf::from("elsewhere")));
        assert_eq!(rerun.router.threshold, 0.25);
        // Model seeds follow the new master seed.
        assert_ne!(rerun.core_model().seed, cfg.core_model().seed);
    }

    #[test]
    fn validation_rejects_contradictory_settings() {
        let bad_drw = r#"{
            "dataset": {"synthetic": {"classes": 10, "dim": 16, "n_max": 100, "test_per_class": 20}},
            "model": {"hidden": [32], "n_experts": 1},
            "train": {"epochs": 10, "batch_size": 8},
            "loss": {"drw_start_epoch": 11}
        }"#;
        let mut cfg = parse(bad_drw).unwrap();
        let err = cfg.resolve(&CliOverrides::default()).unwrap_err();
        assert!(matches!(err, LabError::Config(_)));

        let bad_imbalance = r#"{
            "dataset": {"synthetic": {"classes": 10, "dim": 16, "n_max": 5,
                        "imbalance": 10.0, "test_per_class": 20}},
            "model": {"hidden": [32], "n_experts": 1},
            "train": {"epochs": 1, "batch_size": 8}
        }"#;
        let mut cfg = parse(bad_imbalance).unwrap();
        assert!(cfg.resolve(&CliOverrides::default()).is_err());

        let dup_methods = r#"{
            "dataset": {"synthetic": {"classes": 10, "dim": 16, "n_max": 100, "test_per_class": 20}},
            "model": {"hidden": [32], "n_experts": 2},
            "train": {"epochs": 1, "batch_size": 8},
            "methods": [{"name": "a"}, {"name": "a"}]
        }"#;
        let mut cfg = parse(dup_methods).unwrap();
        assert!(cfg.resolve(&CliOverrides::default()).is_err());

        let bad_name = r#"{
            "dataset": {"synthetic": {"classes": 10, "dim": 16, "n_max": 100, "test_per_class": 20}},
            "model": {"hidden": [32], "n_experts": 2},
            "train": {"epochs": 1, "batch_size": 8},
            "methods": [{"name": "../escape"}]
        }"#;
        let mut cfg = parse(bad_name).unwrap();
        assert!(cfg.resolve(&CliOverrides::default()).is_err());
    }

    #[test]
    fn method_overrides_apply_and_rederive_dependent_defaults() {
        let mut cfg = parse(&minimal_json()).unwrap();
        cfg.resolve(&CliOverrides::default()).unwrap();
        let method = MethodSection {
            name: "ce-single".into(),
            n_experts: Some(1),
            width_factor: None,
            parameter_match: false,
            loss: Some(LossSection {
                kind: LossKindName::Ce,
                lambda: 0.0,
                ..LossSection::default()
            }),
            temperatures: None,
        };
        let derived = cfg.with_method(&method);
        assert_eq!(derived.model.n_experts, 1);
        assert!(matches!(derived.core_loss().kind, LossKind::CrossEntropy));
        assert_eq!(derived.loss.lambda, 0.0);
        // The override left drw_start unset, so it rederives from epochs.
        assert_eq!(derived.loss.drw_start_epoch, Some(8));
        // Untouched sections inherit.
        assert_eq!(derived.train, cfg.train);
        assert_eq!(derived.temperatures, cfg.temperatures);
    }

    #[test]
    fn core_conversions_carry_the_configured_values() {
        let mut cfg = parse(&minimal_json()).unwrap();
        cfg.seed = 11;
        cfg.train.lr_decays = vec![(8, 0.1)];
        cfg.resolve(&CliOverrides::default()).unwrap();
        let model = cfg.core_model();
        assert_eq!(model.in_dim, 16);
        assert_eq!(model.hidden_dims, vec![32, 16]);
        assert_eq!(model.n_experts, 3);
        assert_eq!(model.seed, seed::derive(11, STREAM_MODEL));
        let train = cfg.core_train();
        assert_eq!(train.schedule.lr_at_epoch(9), 0.1 * 0.1);
        let router = cfg.core_router();
        assert_eq!(router.top_s, 10);
        let rt = cfg.core_router_train();
        assert_eq!(rt.batch_size, 8);
        assert_eq!(rt.label_mode, RoutingLabelMode::CumulativePrefix);
    }
}
