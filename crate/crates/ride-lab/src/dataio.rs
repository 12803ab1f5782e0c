//! Dataset construction from a resolved config, the external image-format
//! loader, and the JSON/CSV export surface for outside tools.

use std::env;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use ride_core::data::{
    parse_cifar_records, resample_replicates, shot_split, subsample_longtail, GaussianMixture,
    LabeledDataset, LongTailProfile, ShotSplits,
};
use ride_core::seed;

use crate::config::{
    DatasetConfig, RunConfig, DATA_STREAM_BASE, DATA_STREAM_MIXTURE, DATA_STREAM_REPLICATES,
    DATA_STREAM_TEST, DATA_STREAM_TRAIN,
};
use crate::errors::{io_err, open_err, Result};

/// Root against which relative dataset paths resolve. Overridden by the
/// `RIDE_LAB_DATA` environment variable.
pub fn data_root() -> PathBuf {
    env::var_os("RIDE_LAB_DATA").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

pub fn resolve_data_path(root: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        root.join(path)
    }
}

pub fn load_cifar(path: &Path) -> Result<LabeledDataset> {
    let bytes = fs::read(path).map_err(|e| open_err(path, e))?;
    Ok(parse_cifar_records(&bytes)?)
}

/// The training and evaluation material of one run.
pub struct DatasetBundle {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub profile: LongTailProfile,
    pub splits: ShotSplits,
}

fn profile_for(cfg: &RunConfig) -> Result<LongTailProfile> {
    let (classes, n_max, imbalance, thresholds) = match &cfg.dataset {
        DatasetConfig::Synthetic(s) => {
            (s.classes, s.n_max, s.imbalance, s.shot_thresholds.unwrap_or((100, 20)))
        }
        DatasetConfig::Cifar(c) => (
            ride_core::data::CIFAR_CLASSES,
            c.n_max.unwrap_or(500),
            c.imbalance,
            c.shot_thresholds.unwrap_or((100, 20)),
        ),
    };
    Ok(LongTailProfile::exponential(classes, n_max, imbalance)?
        .with_thresholds(thresholds.0, thresholds.1)?)
}

/// Builds train/test sets for training and evaluation commands. Every draw
/// seeds from `data_seed` alone, so runs differing only in the master seed
/// see identical data.
pub fn build_bundle(cfg: &RunConfig) -> Result<DatasetBundle> {
    let profile = profile_for(cfg)?;
    let splits = shot_split(&profile);
    let ds = cfg.data_seed();
    let (train, test) = match &cfg.dataset {
        DatasetConfig::Synthetic(s) => {
            let mixture = GaussianMixture::new(
                s.classes,
                s.dim,
                s.separation,
                seed::derive(ds, DATA_STREAM_MIXTURE),
            )?;
            let train = mixture.sample(profile.counts(), seed::derive(ds, DATA_STREAM_TRAIN))?;
            let test =
                mixture.sample_balanced(s.test_per_class, seed::derive(ds, DATA_STREAM_TEST))?;
            (train, test)
        }
        DatasetConfig::Cifar(c) => {
            let root = data_root();
            let base = load_cifar(&resolve_data_path(&root, &c.train_path))?;
            let train = subsample_longtail(&base, &profile, seed::derive(ds, DATA_STREAM_TRAIN))?;
            let test = load_cifar(&resolve_data_path(&root, &c.test_path))?;
            (train, test)
        }
    };
    Ok(DatasetBundle { train, test, profile, splits })
}

/// Replicate training sets plus the one shared balanced test set for a
/// bias/variance study. Replicates subsample a fixed base pool, so they
/// overlap the way resamples of one underlying dataset do.
pub struct ReplicateBundle {
    pub replicates: Vec<LabeledDataset>,
    pub test: LabeledDataset,
    pub profile: LongTailProfile,
    pub splits: ShotSplits,
}

pub fn build_replicates(cfg: &RunConfig, n_reps: usize) -> Result<ReplicateBundle> {
    let profile = profile_for(cfg)?;
    let splits = shot_split(&profile);
    let ds = cfg.data_seed();
    let (base, test) = match &cfg.dataset {
        DatasetConfig::Synthetic(s) => {
            let mixture = GaussianMixture::new(
                s.classes,
                s.dim,
                s.separation,
                seed::derive(ds, DATA_STREAM_MIXTURE),
            )?;
            let base = mixture.sample_balanced(
                s.base_per_class.unwrap_or(2 * s.n_max),
                seed::derive(ds, DATA_STREAM_BASE),
            )?;
            let test =
                mixture.sample_balanced(s.test_per_class, seed::derive(ds, DATA_STREAM_TEST))?;
            (base, test)
        }
        DatasetConfig::Cifar(c) => {
            let root = data_root();
            let base = load_cifar(&resolve_data_path(&root, &c.train_path))?;
            let test = load_cifar(&resolve_data_path(&root, &c.test_path))?;
            (base, test)
        }
    };
    let replicates =
        resample_replicates(&base, &profile, n_reps, seed::derive(ds, DATA_STREAM_REPLICATES))?;
    Ok(ReplicateBundle { replicates, test, profile, splits })
}

/// Profile description for external tools: counts, seeds, thresholds, and
/// the shot membership they induce.
pub fn profile_json(profile: &LongTailProfile, data_seed: u64) -> serde_json::Value {
    let splits = shot_split(profile);
    json!({
        "classes": profile.classes(),
        "counts": profile.counts(),
        "total": profile.total(),
        "imbalance_factor": profile.imbalance_factor(),
        "shot_thresholds": {"many_min": profile.many_min, "few_max": profile.few_max},
        "data_seed": data_seed,
        "splits": {
            "many": splits.many(),
            "medium": splits.medium(),
            "few": splits.few(),
        },
    })
}

pub fn write_profile_json(path: &Path, profile: &LongTailProfile, data_seed: u64) -> Result<()> {
    crate::reports::write_json(path, &profile_json(profile, data_seed))
}

/// One header row `label,f0..f{d-1}`, then one row per instance.
pub fn dataset_csv(ds: &LabeledDataset) -> String {
    let mut out = String::from("label");
    for j in 0..ds.dim() {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for (row, &label) in ds.features().iter_rows().zip(ds.labels()) {
        let _ = write!(out, "{label}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset_csv(path: &Path, ds: &LabeledDataset) -> Result<()> {
    fs::write(path, dataset_csv(ds)).map_err(|e| io_err(path, e))
}
