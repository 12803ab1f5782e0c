//! Long-tail dataset construction: exponential class profiles, seeded
//! subsampling, replicate draws, shot splits, a synthetic Gaussian-mixture
//! task, and the CIFAR-100 binary record layout.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// In no_std builds the math methods come from the Float trait; std test
// builds resolve them as inherent methods and would flag the import.
#[cfg(not(test))]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::grid::ValueGrid;
use crate::seed;

/// Per-class instance counts for a long-tailed training set, plus the
/// thresholds that partition classes into many/medium/few shot groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LongTailProfile {
    counts: Vec<usize>,
    /// Classes with more than this many instances are "many-shot".
    pub many_min: usize,
    /// Classes with at most this many instances are "few-shot".
    pub few_max: usize,
}

pub const DEFAULT_MANY_MIN: usize = 100;
pub const DEFAULT_FEW_MAX: usize = 20;

impl LongTailProfile {
    /// Exponential profile: `n_k = round(n_max * imbalance^(-k / (c-1)))`,
    /// clamped to at least one instance per class.
    ///
    /// Class 0 always gets exactly `n_max`; the last class gets
    /// `round(n_max / imbalance)`. An imbalance larger than `n_max` would
    /// leave the tail empty and is rejected.
    pub fn exponential(classes: usize, n_max: usize, imbalance: f64) -> Result<Self> {
        if classes < 2 {
            return Err(CoreError::Config(format!(
                "profile needs at least two classes, got {classes}"
            )));
        }
        if n_max == 0 {
            return Err(CoreError::Config("n_max must be positive".into()));
        }
        if !imbalance.is_finite() || imbalance < 1.0 {
            return Err(CoreError::Config(format!(
                "imbalance factor must be >= 1, got {imbalance}"
            )));
        }
        if (n_max as f64) < imbalance {
            return Err(CoreError::Config(format!(
                "infeasible profile: n_max {n_max} < imbalance {imbalance} leaves the tail empty"
            )));
        }
        let counts = (0..classes)
            .map(|k| {
                let exact = n_max as f64 * imbalance.powf(-(k as f64) / (classes as f64 - 1.0));
                exact.round().max(1.0) as usize
            })
            .collect();
        Ok(Self {
            counts,
            many_min: DEFAULT_MANY_MIN,
            few_max: DEFAULT_FEW_MAX,
        })
    }

    /// Profile from explicit per-class counts.
    pub fn from_counts(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(CoreError::Config("profile has no classes".into()));
        }
        if counts.iter().any(|&n| n == 0) {
            return Err(CoreError::Config("every class needs at least one instance".into()));
        }
        Ok(Self {
            counts,
            many_min: DEFAULT_MANY_MIN,
            few_max: DEFAULT_FEW_MAX,
        })
    }

    /// Replaces the shot thresholds. `many_min` must exceed `few_max` so the
    /// three groups stay disjoint.
    pub fn with_thresholds(mut self, many_min: usize, few_max: usize) -> Result<Self> {
        if many_min <= few_max {
            return Err(CoreError::Config(format!(
                "many threshold {many_min} must exceed few threshold {few_max}"
            )));
        }
        self.many_min = many_min;
        self.few_max = few_max;
        Ok(self)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Largest count divided by smallest.
    pub fn imbalance_factor(&self) -> f64 {
        let max = *self.counts.iter().max().expect("non-empty") as f64;
        let min = *self.counts.iter().min().expect("non-empty") as f64;
        max / min
    }
}

/// Shot-group membership of one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shot {
    Many,
    Medium,
    Few,
}

/// Partition of class indices into many/medium/few shot groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShotSplits {
    per_class: Vec<Shot>,
}

impl ShotSplits {
    pub fn shot_of(&self, class: usize) -> Shot {
        self.per_class[class]
    }

    pub fn classes(&self) -> usize {
        self.per_class.len()
    }

    fn group(&self, shot: Shot) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == shot)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn many(&self) -> Vec<usize> {
        self.group(Shot::Many)
    }

    pub fn medium(&self) -> Vec<usize> {
        self.group(Shot::Medium)
    }

    pub fn few(&self) -> Vec<usize> {
        self.group(Shot::Few)
    }
}

/// Splits classes by their profile count: strictly above `many_min` is many,
/// at most `few_max` is few, the rest is medium. Every class lands in exactly
/// one group.
pub fn shot_split(profile: &LongTailProfile) -> ShotSplits {
    let per_class = profile
        .counts
        .iter()
        .map(|&n| {
            if n > profile.many_min {
                Shot::Many
            } else if n <= profile.few_max {
                Shot::Few
            } else {
                Shot::Medium
            }
        })
        .collect();
    ShotSplits { per_class }
}

/// A feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: ValueGrid,
    labels: Vec<usize>,
    classes: usize,
    by_class: Vec<Vec<usize>>,
}

impl LabeledDataset {
    pub fn new(features: ValueGrid, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(CoreError::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if classes == 0 {
            return Err(CoreError::Config("need at least one class".into()));
        }
        let mut by_class = vec![Vec::new(); classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(CoreError::Data(format!(
                    "label {y} at row {i} out of range for {classes} classes"
                )));
            }
            by_class[y].push(i);
        }
        Ok(Self {
            features,
            labels,
            classes,
            by_class,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &ValueGrid {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Row indices of every instance of `class`.
    pub fn indices_of(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.by_class.iter().map(|v| v.len()).collect()
    }

    /// New dataset holding the given rows, in order. Indices may repeat.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let dim = self.dim();
        let mut data = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(CoreError::Data(format!(
                    "row index {i} out of range ({} rows)",
                    self.len()
                )));
            }
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset::new(ValueGrid::matrix(indices.len(), dim, data)?, labels, self.classes)
    }
}

/// Draws a long-tailed training set from a larger base pool: for each class
/// `k`, exactly `n_k` instances are chosen without replacement.
///
/// The output composition depends only on `(base, profile, seed)`; instances
/// are emitted class by class in class order.
pub fn subsample_longtail(
    base: &LabeledDataset,
    profile: &LongTailProfile,
    seed: u64,
) -> Result<LabeledDataset> {
    if profile.classes() != base.classes() {
        return Err(CoreError::Shape(format!(
            "profile has {} classes, base has {}",
            profile.classes(),
            base.classes()
        )));
    }
    let mut rng = seed::rng(seed);
    let mut chosen = Vec::with_capacity(profile.total());
    for (k, &want) in profile.counts().iter().enumerate() {
        let pool = base.indices_of(k);
        if pool.len() < want {
            return Err(CoreError::Data(format!(
                "class {k} has {} base instances, profile wants {want}",
                pool.len()
            )));
        }
        for idx in rand::seq::index::sample(&mut rng, pool.len(), want) {
            chosen.push(pool[idx]);
        }
    }
    base.subset(&chosen)
}

/// Independent long-tailed replicates: one subsample per derived seed.
/// Replicate `r` uses `derive(seed, r)`, so the draws are mutually
/// independent and individually reproducible.
pub fn resample_replicates(
    base: &LabeledDataset,
    profile: &LongTailProfile,
    n_reps: usize,
    seed: u64,
) -> Result<Vec<LabeledDataset>> {
    if n_reps < 2 {
        return Err(CoreError::Config(format!(
            "replicate studies need at least two replicates, got {n_reps}"
        )));
    }
    (0..n_reps)
        .map(|r| subsample_longtail(base, profile, seed::derive(seed, r as u64)))
        .collect()
}

/// Isotropic Gaussian mixture: one unit-variance spherical component per
/// class, with means placed at `separation` times random unit directions.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    means: ValueGrid,
    separation: f64,
}

impl GaussianMixture {
    /// Places the class means. The mean layout is fixed by `seed`; sampling
    /// seeds are supplied separately so several draws can share one task.
    pub fn new(classes: usize, dim: usize, separation: f64, seed: u64) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(CoreError::Config(format!(
                "mixture needs positive classes and dim, got {classes} and {dim}"
            )));
        }
        if !separation.is_finite() || separation < 0.0 {
            return Err(CoreError::Config(format!(
                "separation must be non-negative, got {separation}"
            )));
        }
        let mut rng = seed::rng(seed);
        let mut means = Vec::with_capacity(classes * dim);
        for _ in 0..classes {
            let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let mut norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            while norm == 0.0 {
                dir = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
            means.extend(dir.iter().map(|v| separation * v / norm));
        }
        Ok(Self {
            means: ValueGrid::matrix(classes, dim, means)?,
            separation,
        })
    }

    pub fn means(&self) -> &ValueGrid {
        &self.means
    }

    pub fn classes(&self) -> usize {
        self.means.rows()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn separation(&self) -> f64 {
        self.separation
    }

    /// Draws `counts[k]` instances of each class, emitted class by class.
    pub fn sample(&self, counts: &[usize], seed: u64) -> Result<LabeledDataset> {
        if counts.len() != self.classes() {
            return Err(CoreError::Shape(format!(
                "{} counts for {} classes",
                counts.len(),
                self.classes()
            )));
        }
        let dim = self.dim();
        let total: usize = counts.iter().sum();
        let mut rng = seed::rng(seed);
        let mut data = Vec::with_capacity(total * dim);
        let mut labels = Vec::with_capacity(total);
        for (k, &n) in counts.iter().enumerate() {
            let mean = self.means.row(k);
            for _ in 0..n {
                data.extend(mean.iter().map(|&m| m + rng.sample::<f64, _>(StandardNormal)));
                labels.push(k);
            }
        }
        LabeledDataset::new(ValueGrid::matrix(total, dim, data)?, labels, self.classes())
    }

    /// Balanced draw: `per_class` instances of every class.
    pub fn sample_balanced(&self, per_class: usize, seed: u64) -> Result<LabeledDataset> {
        self.sample(&vec![per_class; self.classes()], seed)
    }
}

/// One-call synthetic task: places means with one derived seed and draws a
/// balanced sample with another, so the result is fully determined by `seed`.
pub fn synth_gaussian_mixture(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    let mixture = GaussianMixture::new(classes, dim, separation, seed::derive(seed, 0))?;
    mixture.sample_balanced(per_class, seed::derive(seed, 1))
}

/// Byte length of one record: coarse label, fine label, then 32x32x3 pixels.
pub const CIFAR_RECORD_BYTES: usize = 3074;
pub const CIFAR_PIXELS: usize = 3072;
pub const CIFAR_CLASSES: usize = 100;

/// Parses the CIFAR-100 binary layout: each record is one coarse-label byte,
/// one fine-label byte, and 3072 pixel bytes. Features are pixels scaled to
/// `[0, 1]` by `1/255`; labels are the fine labels.
pub fn parse_cifar_records(bytes: &[u8]) -> Result<LabeledDataset> {
    if bytes.is_empty() {
        return Err(CoreError::Format("empty record stream".into()));
    }
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(CoreError::Format(format!(
            "{} bytes is not a multiple of the {CIFAR_RECORD_BYTES}-byte record size",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let fine = record[1] as usize;
        if fine >= CIFAR_CLASSES {
            return Err(CoreError::Format(format!(
                "record {i} has fine label {fine}, expected < {CIFAR_CLASSES}"
            )));
        }
        labels.push(fine);
        data.extend(record[2..].iter().map(|&p| p as f64 / 255.0));
    }
    LabeledDataset::new(ValueGrid::matrix(n, CIFAR_PIXELS, data)?, labels, CIFAR_CLASSES)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_profile_matches_pinned_values() {
        let p = LongTailProfile::exponential(100, 500, 100.0).unwrap();
        assert_eq!(p.counts()[0], 500);
        assert_eq!(p.counts()[50], 49);
        assert_eq!(p.counts()[99], 5);
        assert!((p.imbalance_factor() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_profile_is_monotone_and_positive() {
        for (c, n_max, imf) in [(10, 300, 100.0), (100, 500, 100.0), (7, 50, 10.0), (5, 80, 1.0)] {
            let p = LongTailProfile::exponential(c, n_max, imf).unwrap();
            assert_eq!(p.counts()[0], n_max);
            for w in p.counts().windows(2) {
                assert!(w[0] >= w[1], "counts must be non-increasing: {:?}", p.counts());
            }
            assert!(*p.counts().last().unwrap() >= 1);
        }
    }

    #[test]
    fn balanced_profile_when_imbalance_is_one() {
        let p = LongTailProfile::exponential(6, 40, 1.0).unwrap();
        assert!(p.counts().iter().all(|&n| n == 40));
        assert_eq!(p.imbalance_factor(), 1.0);
    }

    #[test]
    fn infeasible_profile_is_rejected() {
        let err = LongTailProfile::exponential(10, 50, 100.0).unwrap_err();
        assert!(matches!(err, CoreError::Config(_)));
    }

    /// Oracle: recompute the profile with straight-line arithmetic and apply
    /// the thresholds directly to every class.
    #[test]
    fn shot_split_matches_per_class_oracle() {
        let p = LongTailProfile::exponential(100, 500, 100.0).unwrap();
        let splits = shot_split(&p);
        for k in 0..100 {
            let exact = 500.0 * 100.0f64.powf(-(k as f64) / 99.0);
            let n = exact.round().max(1.0) as usize;
            assert_eq!(n, p.counts()[k]);
            let expect = if n > 100 {
                Shot::Many
            } else if n <= 20 {
                Shot::Few
            } else {
                Shot::Medium
            };
            assert_eq!(splits.shot_of(k), expect, "class {k} with count {n}");
        }
        // Boundary classes land exactly here: n_34=103, n_35=98, n_68=21, n_69=20.
        assert_eq!(splits.many().len(), 35);
        assert_eq!(splits.medium().len(), 34);
        assert_eq!(splits.few().len(), 31);
        assert_eq!(splits.many().len() + splits.medium().len() + splits.few().len(), 100);
    }

    #[test]
    fn shot_split_boundaries_are_inclusive_exclusive() {
        let p = LongTailProfile::from_counts(vec![101, 100, 21, 20]).unwrap();
        let splits = shot_split(&p);
        assert_eq!(splits.shot_of(0), Shot::Many); // strictly above 100
        assert_eq!(splits.shot_of(1), Shot::Medium); // exactly 100 is medium
        assert_eq!(splits.shot_of(2), Shot::Medium); // 21 is medium
        assert_eq!(splits.shot_of(3), Shot::Few); // exactly 20 is few
    }

    #[test]
    fn thresholds_must_be_ordered() {
        let err = LongTailProfile::from_counts(vec![5, 5])
            .unwrap()
            .with_thresholds(10, 10)
            .unwrap_err();
        assert!(matches!(err, CoreError::Config(_)));
    }

    fn tiny_base(per_class: usize, classes: usize, dim: usize) -> LabeledDataset {
        // Distinct feature rows so subsample provenance is checkable.
        let total = per_class * classes;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for k in 0..classes {
            for i in 0..per_class {
                for d in 0..dim {
                    data.push((k * 1000 + i * 10 + d) as f64);
                }
                labels.push(k);
            }
        }
        LabeledDataset::new(ValueGrid::matrix(total, dim, data).unwrap(), labels, classes).unwrap()
    }

    #[test]
    fn dataset_rejects_out_of_range_labels() {
        let err = LabeledDataset::new(ValueGrid::zeros(2, 1), vec![0, 3], 3).unwrap_err();
        assert!(matches!(err, CoreError::Data(_)));
    }

    #[test]
    fn subsample_composition_matches_profile() {
        let base = tiny_base(30, 4, 2);
        let profile = LongTailProfile::from_counts(vec![20, 11, 5, 2]).unwrap();
        let sub = subsample_longtail(&base, &profile, 7).unwrap();
        assert_eq!(sub.class_counts(), vec![20, 11, 5, 2]);
        assert_eq!(sub.len(), 38);
        assert_eq!(sub.dim(), 2);
    }

    #[test]
    fn subsample_is_seed_deterministic() {
        let base = tiny_base(15, 3, 2);
        let profile = LongTailProfile::from_counts(vec![10, 6, 3]).unwrap();
        let a = subsample_longtail(&base, &profile, 3).unwrap();
        let b = subsample_longtail(&base, &profile, 3).unwrap();
        assert_eq!(a, b);
        let c = subsample_longtail(&base, &profile, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn subsample_draws_without_replacement() {
        let base = tiny_base(8, 2, 1);
        let profile = LongTailProfile::from_counts(vec![8, 8]).unwrap();
        let sub = subsample_longtail(&base, &profile, 11).unwrap();
        // Taking the whole pool must reproduce each class exactly once.
        for k in 0..2 {
            let mut rows: Vec<u64> = sub
                .indices_of(k)
                .iter()
                .map(|&i| sub.features().row(i)[0].to_bits())
                .collect();
            rows.sort_unstable();
            rows.dedup();
            assert_eq!(rows.len(), 8, "class {k} repeated a base instance");
        }
    }

    #[test]
    fn subsample_rejects_oversized_profile() {
        let base = tiny_base(5, 2, 1);
        let profile = LongTailProfile::from_counts(vec![6, 2]).unwrap();
        let err = subsample_longtail(&base, &profile, 0).unwrap_err();
        assert!(matches!(err, CoreError::Data(_)));
    }

    #[test]
    fn replicates_are_distinct_and_reproducible() {
        let base = tiny_base(25, 3, 2);
        let profile = LongTailProfile::from_counts(vec![12, 6, 3]).unwrap();
        let reps = resample_replicates(&base, &profile, 4, 99).unwrap();
        assert_eq!(reps.len(), 4);
        for r in &reps {
            assert_eq!(r.class_counts(), vec![12, 6, 3]);
        }
        assert_ne!(reps[0], reps[1]);
        let again = resample_replicates(&base, &profile, 4, 99).unwrap();
        assert_eq!(reps, again);
    }

    #[test]
    fn mixture_means_sit_on_the_separation_sphere() {
        let task = GaussianMixture::new(5, 8, 3.5, 42).unwrap();
        for k in 0..5 {
            let norm = task.means().row(k).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 3.5).abs() < 1e-12, "class {k} norm {norm}");
        }
    }

    #[test]
    fn mixture_sampling_is_deterministic_per_seed() {
        let task = GaussianMixture::new(3, 4, 2.0, 5).unwrap();
        let a = task.sample(&[4, 2, 3], 17).unwrap();
        let b = task.sample(&[4, 2, 3], 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![4, 2, 3]);
        let c = task.sample(&[4, 2, 3], 18).unwrap();
        assert_ne!(a, c);
    }

    /// Oracle: with unit noise and well-separated means, classifying heldout
    /// draws by the nearest true mean must be nearly perfect.
    #[test]
    fn mixture_is_separable_by_nearest_mean() {
        let task = GaussianMixture::new(10, 16, 10.0, 1).unwrap();
        let heldout = task.sample_balanced(50, 2).unwrap();
        let mut correct = 0;
        for (i, &label) in heldout.labels().iter().enumerate() {
            let x = heldout.features().row(i);
            let best = (0..task.classes())
                .min_by(|&a, &b| {
                    let da: f64 = task.means().row(a).iter().zip(x).map(|(m, v)| (m - v) * (m - v)).sum();
                    let db: f64 = task.means().row(b).iter().zip(x).map(|(m, v)| (m - v) * (m - v)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if best == label {
                correct += 1;
            }
        }
        let acc = correct as f64 / heldout.len() as f64;
        assert!(acc > 0.95, "nearest-mean accuracy {acc}");
    }

    #[test]
    fn one_call_mixture_is_reproducible() {
        let a = synth_gaussian_mixture(4, 6, 10, 2.0, 77).unwrap();
        let b = synth_gaussian_mixture(4, 6, 10, 2.0, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
        assert_eq!(a.dim(), 6);
        assert_eq!(a.class_counts(), vec![10; 4]);
    }

    fn cifar_record(coarse: u8, fine: u8, pixel_fn: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut rec = vec![coarse, fine];
        rec.extend((0..CIFAR_PIXELS).map(pixel_fn));
        rec
    }

    #[test]
    fn cifar_records_parse_fine_labels_and_scaled_pixels() {
        let mut bytes = cifar_record(7, 3, |p| (p % 256) as u8);
        bytes.extend(cifar_record(1, 99, |_| 255));
        let ds = parse_cifar_records(&bytes).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.classes(), CIFAR_CLASSES);
        assert_eq!(ds.labels(), &[3, 99]);
        assert_eq!(ds.features().at(0, 0), 0.0);
        assert_eq!(ds.features().at(0, 255), 1.0); // pixel byte 255 scales to exactly 1
        assert!((ds.features().at(0, 1) - 1.0 / 255.0).abs() < 1e-15);
        assert!(ds.features().row(1).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cifar_rejects_truncated_streams() {
        let bytes = vec![0u8; CIFAR_RECORD_BYTES - 1];
        assert!(matches!(parse_cifar_records(&bytes), Err(CoreError::Format(_))));
        assert!(matches!(parse_cifar_records(&[]), Err(CoreError::Format(_))));
    }

    #[test]
    fn cifar_rejects_out_of_range_fine_label() {
        let bytes = cifar_record(0, 100, |_| 0);
        assert!(matches!(parse_cifar_records(&bytes), Err(CoreError::Format(_))));
    }
}
