//! Versioned binary checkpoints for models and routers.
//!
//! Layout: 4-byte magic, u32 format version, u8 kind, u32 header length, a
//! JSON header carrying dimensions and seeds, then the flattened parameters
//! as little-endian f32 in declaration order. Parameters are truncated to
//! single precision on disk; everything in memory stays f64.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ride_core::experts::{build_model, ModelConfig, RideModel};
use ride_core::router::{ExpertRouter, RouterConfig};

use crate::errors::{io_err, open_err, LabError, Result};

pub const MAGIC: [u8; 4] = *b"RIDE";
pub const FORMAT_VERSION: u32 = 1;
const KIND_MODEL: u8 = 1;
const KIND_ROUTER: u8 = 2;

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    in_dim: usize,
    hidden_dims: Vec<usize>,
    classes: usize,
    n_experts: usize,
    width_factor: f64,
    shared_layers: Option<usize>,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RouterHeader {
    format_version: u32,
    hidden: usize,
    top_s: usize,
    omega_on: f64,
    threshold: f64,
    n_stages: usize,
    feat_dim: usize,
    seed: u64,
}

fn encode(kind: u8, header: &impl Serialize, params: &[f64]) -> Result<Vec<u8>> {
    let header_bytes = serde_json::to_vec(header)
        .map_err(|e| LabError::Data(format!("cannot serialize checkpoint header: {e}")))?;
    let mut out = Vec::with_capacity(13 + header_bytes.len() + 8 + 4 * params.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for &p in params {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    Ok(out)
}

/// Splits a checkpoint file into its header JSON and parameter vector,
/// validating magic, version, kind, and lengths.
fn decode(path: &Path, expect_kind: u8) -> Result<(Vec<u8>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| open_err(path, e))?;
    let malformed = |what: &str| {
        LabError::Data(format!("malformed checkpoint {}: {what}", path.display()))
    };
    if bytes.len() < 13 {
        return Err(malformed("shorter than the fixed header"));
    }
    if bytes[..4] != MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(malformed(&format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let kind = bytes[8];
    if kind != expect_kind {
        let name = |k| match k {
            KIND_MODEL => "a model",
            KIND_ROUTER => "a router",
            _ => "an unknown artifact",
        };
        return Err(malformed(&format!(
            "holds {}, expected {}",
            name(kind),
            name(expect_kind)
        )));
    }
    let header_len = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let params_at = 13 + header_len;
    if bytes.len() < params_at + 8 {
        return Err(malformed("truncated header"));
    }
    let header = bytes[13..params_at].to_vec();
    let count = u64::from_le_bytes(bytes[params_at..params_at + 8].try_into().unwrap()) as usize;
    let data = &bytes[params_at + 8..];
    if data.len() != 4 * count {
        return Err(malformed(&format!(
            "{count} parameters declared, {} bytes of payload",
            data.len()
        )));
    }
    let params = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((header, params))
}

pub fn save_model(path: &Path, model: &RideModel, config: &ModelConfig) -> Result<()> {
    let header = ModelHeader {
        format_version: FORMAT_VERSION,
        in_dim: config.in_dim,
        hidden_dims: config.hidden_dims.clone(),
        classes: config.classes,
        n_experts: config.n_experts,
        width_factor: config.width_factor,
        shared_layers: config.shared_layers,
        seed: config.seed,
    };
    let bytes = encode(KIND_MODEL, &header, &model.params())?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn load_model(path: &Path) -> Result<(RideModel, ModelConfig)> {
    let (header_bytes, params) = decode(path, KIND_MODEL)?;
    let header: ModelHeader = serde_json::from_slice(&header_bytes).map_err(|e| {
        LabError::Data(format!("malformed checkpoint {}: header: {e}", path.display()))
    })?;
    let config = ModelConfig {
        in_dim: header.in_dim,
        hidden_dims: header.hidden_dims,
        classes: header.classes,
        n_experts: header.n_experts,
        width_factor: header.width_factor,
        shared_layers: header.shared_layers,
        seed: header.seed,
    };
    let mut model = build_model(&config)?;
    if params.len() != model.param_count() {
        return Err(LabError::Data(format!(
            "malformed checkpoint {}: {} parameters for an architecture needing {}",
            path.display(),
            params.len(),
            model.param_count()
        )));
    }
    model.set_params(&params)?;
    Ok((model, config))
}

pub fn save_router(path: &Path, router: &ExpertRouter) -> Result<()> {
    let header = RouterHeader {
        format_version: FORMAT_VERSION,
        hidden: router.hidden(),
        top_s: router.top_s(),
        omega_on: router.omega_on(),
        threshold: router.threshold,
        n_stages: router.n_stages(),
        feat_dim: router.feat_dim(),
        seed: 0,
    };
    let bytes = encode(KIND_ROUTER, &header, &router.params())?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Routers are rebuilt against the model they route; dimension disagreements
/// mean the checkpoint belongs to a different model.
pub fn load_router(path: &Path, model: &RideModel) -> Result<ExpertRouter> {
    let (header_bytes, params) = decode(path, KIND_ROUTER)?;
    let header: RouterHeader = serde_json::from_slice(&header_bytes).map_err(|e| {
        LabError::Data(format!("malformed checkpoint {}: header: {e}", path.display()))
    })?;
    if header.feat_dim != model.feature_dim() || header.n_stages + 1 != model.n_experts() {
        return Err(LabError::Config(format!(
            "router checkpoint {} was trained for {} stages over {}-dim features; \
             the model has {} experts and {}-dim features",
            path.display(),
            header.n_stages,
            header.feat_dim,
            model.n_experts(),
            model.feature_dim()
        )));
    }
    let config = RouterConfig {
        hidden: header.hidden,
        top_s: header.top_s,
        omega_on: header.omega_on,
        threshold: header.threshold,
    };
    let mut router = ExpertRouter::init(model, &config, header.seed)?;
    if params.len() != router.param_count() {
        return Err(LabError::Data(format!(
            "malformed checkpoint {}: {} parameters for gates needing {}",
            path.display(),
            params.len(),
            router.param_count()
        )));
    }
    router.set_params(&params)?;
    Ok(router)
}
