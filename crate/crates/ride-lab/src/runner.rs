//! Command implementations. Each writing command resolves the config, emits
//! `resolved_config.json` into the output directory, runs, and returns the
//! main report value alongside the directory it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use ride_core::analysis::{
    accuracy_by_split, hardest_negative_scores, zero_one_decomposition, PredictionMatrix,
};
use ride_core::distill::DistillConfig;
use ride_core::experts::{ModelConfig, RideModel};
use ride_core::router::{cascade_infer, train_router, CostModel, ExpertRouter};
use ride_core::seed;
use ride_core::train::{accuracy, predict, train_stage1};

use crate::checkpoint;
use crate::config::{CliOverrides, MethodSection, RunConfig, STREAM_METHOD, STREAM_ROUTER_INIT};
use crate::dataio::{build_bundle, build_replicates, write_dataset_csv, write_profile_json, DatasetBundle};
use crate::errors::{io_err, LabError, Result};
use crate::reports;

/// What a writing command produced: where it wrote and the main report.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub report: Value,
}

fn prepare(config_path: &Path, overrides: &CliOverrides) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.resolve(overrides)?;
    let out = cfg.out_dir();
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    cfg.write_resolved(&out.join("resolved_config.json"))?;
    Ok((cfg, out))
}

fn materialize_data(cfg: &RunConfig, out: &Path) -> Result<DatasetBundle> {
    let bundle = build_bundle(cfg)?;
    write_profile_json(&out.join("profile.json"), &bundle.profile, cfg.data_seed())?;
    if cfg.export_csv() {
        write_dataset_csv(&out.join("train_data.csv"), &bundle.train)?;
        write_dataset_csv(&out.join("test_data.csv"), &bundle.test)?;
    }
    Ok(bundle)
}

fn check_model_matches_data(model: &RideModel, cfg: &RunConfig) -> Result<()> {
    if model.classes() != cfg.classes() || model.in_dim() != cfg.in_dim() {
        return Err(LabError::Config(format!(
            "checkpoint expects {} classes x {} inputs but the dataset provides {} x {}",
            model.classes(),
            model.in_dim(),
            cfg.classes(),
            cfg.in_dim()
        )));
    }
    Ok(())
}

fn train_and_report(
    cfg: &RunConfig,
    out: &Path,
    bundle: &DatasetBundle,
    teacher: Option<(&RideModel, &DistillConfig)>,
) -> Result<Value> {
    let model_cfg = cfg.core_model();
    let (model, metrics) = train_stage1(
        &model_cfg,
        &bundle.train,
        &cfg.core_loss(),
        &cfg.core_temperatures(),
        &cfg.core_train(),
        teacher,
    )?;
    reports::write_metrics_csv(&out.join("metrics.csv"), &metrics)?;
    checkpoint::save_model(&out.join("model.ckpt"), &model, &model_cfg)?;
    let n = model.n_experts();
    let report = json!({
        "epochs": metrics.len(),
        "experts": n,
        "train": reports::dataset_eval_json(&model, &bundle.train, &bundle.splits, n)?,
        "test": reports::dataset_eval_json(&model, &bundle.test, &bundle.splits, n)?,
    });
    reports::write_json(&out.join("train_report.json"), &report)?;
    Ok(report)
}

/// Stage-1 training: fits the experts, writes `model.ckpt`, `metrics.csv`,
/// and `train_report.json`.
pub fn cmd_train(config_path: &Path, overrides: &CliOverrides) -> Result<RunOutput> {
    let (cfg, out) = prepare(config_path, overrides)?;
    let bundle = materialize_data(&cfg, &out)?;
    let report = train_and_report(&cfg, &out, &bundle, None)?;
    Ok(RunOutput { out_dir: out, report })
}

/// Stage-1 training under a frozen teacher's ensemble targets. Same
/// artifacts as `train`; the config must carry a `distill` section.
pub fn cmd_distill(config_path: &Path, overrides: &CliOverrides) -> Result<RunOutput> {
    let (cfg, out) = prepare(config_path, overrides)?;
    let section = cfg.distill.clone().ok_or_else(|| {
        LabError::Config("distillation needs a `distill` section naming the teacher checkpoint".into())
    })?;
    let (teacher, _teacher_cfg) = checkpoint::load_model(&section.teacher)?;
    check_model_matches_data(&teacher, &cfg)?;
    let kd = DistillConfig {
        temperature: section.temperature,
        weight: section.weight,
    };
    let bundle = materialize_data(&cfg, &out)?;
    let report = train_and_report(&cfg, &out, &bundle, Some((&teacher, &kd)))?;
    Ok(RunOutput { out_dir: out, report })
}

fn routed_test_report(
    model: &RideModel,
    model_cfg: &ModelConfig,
    router: &ExpertRouter,
    bundle: &DatasetBundle,
    out: &Path,
) -> Result<Value> {
    let n = model.n_experts();
    let traces = cascade_infer(model, router, bundle.test.features())?;
    let cascade_preds: Vec<usize> = traces.iter().map(|t| t.prediction).collect();
    let cascade_acc = accuracy_by_split(&cascade_preds, bundle.test.labels(), &bundle.splits)?;
    let full_preds = predict(model, bundle.test.features(), n)?;
    let full_acc = accuracy_by_split(&full_preds, bundle.test.labels(), &bundle.splits)?;
    let cost = CostModel::of(model, router);
    let report = reports::cost_report_json(
        &cost,
        &traces,
        model_cfg.reference_macs(),
        router.threshold,
        &cascade_acc,
        &full_acc,
        n,
    );
    let histogram =
        reports::routing_histogram_csv(&traces, bundle.test.labels(), &bundle.splits, n)?;
    reports::write_text(&out.join("routing_histogram.csv"), &histogram)?;
    Ok(report)
}

/// Stage-2: trains the gates on a frozen checkpoint, then prices a routed
/// pass over the test set. Writes `router.ckpt`, `router_metrics.csv`,
/// `cost_report.json`, and `routing_histogram.csv`.
pub fn cmd_route_train(
    config_path: &Path,
    checkpoint_path: &Path,
    overrides: &CliOverrides,
) -> Result<RunOutput> {
    let (cfg, out) = prepare(config_path, overrides)?;
    let (model, model_cfg) = checkpoint::load_model(checkpoint_path)?;
    if model.n_experts() == 1 {
        return Err(LabError::Config(
            "a single-expert model has nothing to route; routing needs at least two experts".into(),
        ));
    }
    check_model_matches_data(&model, &cfg)?;
    let bundle = materialize_data(&cfg, &out)?;
    let mut router = ExpertRouter::init(
        &model,
        &cfg.core_router(),
        seed::derive(cfg.seed, STREAM_ROUTER_INIT),
    )?;
    let train_cfg = cfg.core_router_train();
    let losses = train_router(&mut router, &model, &bundle.train, &train_cfg)?;
    let lrs: Vec<f64> = (0..losses.len())
        .map(|e| train_cfg.schedule.lr_at_epoch(e))
        .collect();
    reports::write_router_metrics_csv(&out.join("router_metrics.csv"), &lrs, &losses)?;
    checkpoint::save_router(&out.join("router.ckpt"), &router)?;
    let report = routed_test_report(&model, &model_cfg, &router, &bundle, &out)?;
    reports::write_json(&out.join("cost_report.json"), &report)?;
    Ok(RunOutput { out_dir: out, report })
}

/// Evaluates a checkpoint on the configured data: split accuracies and
/// hardest-negative means on the train and test sets, a test-set
/// hardest-negative histogram, and, with a router, the routed cost block.
/// `experts` caps inference to that leading prefix and excludes routing.
pub fn cmd_eval(
    config_path: &Path,
    checkpoint_path: &Path,
    router_path: Option<&Path>,
    experts: Option<usize>,
    overrides: &CliOverrides,
) -> Result<RunOutput> {
    if router_path.is_some() && experts.is_some() {
        return Err(LabError::Config(
            "--router and --experts conflict: routed inference picks its own expert count".into(),
        ));
    }
    let (cfg, out) = prepare(config_path, overrides)?;
    let (model, model_cfg) = checkpoint::load_model(checkpoint_path)?;
    check_model_matches_data(&model, &cfg)?;
    let bundle = materialize_data(&cfg, &out)?;
    let n = model.n_experts();
    let m = experts.unwrap_or(n);
    if m == 0 || m > n {
        return Err(LabError::Config(format!(
            "--experts {m} is outside this checkpoint's 1..={n}"
        )));
    }
    let mut report = json!({
        "experts_used": m,
        "train": reports::dataset_eval_json(&model, &bundle.train, &bundle.splits, m)?,
        "test": reports::dataset_eval_json(&model, &bundle.test, &bundle.splits, m)?,
    });
    let probs = model.ensemble_probs(bundle.test.features(), m)?;
    let scores = hardest_negative_scores(&probs, bundle.test.labels())?;
    let histogram =
        reports::hardest_negative_histogram_csv(&scores, bundle.test.labels(), &bundle.splits)?;
    reports::write_text(&out.join("hardest_negative_histogram.csv"), &histogram)?;
    if let Some(rp) = router_path {
        let mut router = checkpoint::load_router(rp, &model)?;
        // The checkpoint's stored threshold stands unless the flag overrides it.
        if let Some(t) = overrides.threshold {
            router.threshold = t;
        }
        report["routing"] = routed_test_report(&model, &model_cfg, &router, &bundle, &out)?;
    }
    reports::write_json(&out.join("eval_report.json"), &report)?;
    Ok(RunOutput { out_dir: out, report })
}

fn default_method() -> MethodSection {
    MethodSection {
        name: "default".into(),
        n_experts: None,
        width_factor: None,
        parameter_match: false,
        loss: None,
        temperatures: None,
    }
}

/// Trains `replicates` models per method on bootstrap-resampled long-tail
/// draws of a shared base pool, decomposes the 0-1 loss on the shared test
/// set, and writes `biasvar_<method>.csv` / `.json` per method.
pub fn cmd_biasvar(config_path: &Path, jobs: usize, overrides: &CliOverrides) -> Result<RunOutput> {
    let (cfg, out) = prepare(config_path, overrides)?;
    let n_reps = cfg.replicates.ok_or_else(|| {
        LabError::Config("bias/variance studies need a `replicates` count in the config".into())
    })?;
    if n_reps < 2 {
        return Err(LabError::Config(format!(
            "variance is undefined for a single training; replicates must be at least 2, got {n_reps}"
        )));
    }
    let reps = build_replicates(&cfg, n_reps)?;
    write_profile_json(&out.join("profile.json"), &reps.profile, cfg.data_seed())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| LabError::Config(format!("cannot build a {jobs}-worker pool: {e}")))?;

    let methods = if cfg.methods.is_empty() {
        vec![default_method()]
    } else {
        cfg.methods.clone()
    };
    let mut summaries = Map::new();
    for (idx, method) in methods.iter().enumerate() {
        let method_cfg = cfg.with_method(method);
        let model_template = if method.parameter_match {
            cfg.core_model().parameter_matched_single()?
        } else {
            method_cfg.core_model()
        };
        let loss_cfg = method_cfg.core_loss();
        let temps = method_cfg.core_temperatures();
        let train_template = method_cfg.core_train();
        let method_seed = seed::derive(seed::derive(cfg.seed, STREAM_METHOD), idx as u64);

        // Replicate r's seeds depend only on (method, r), so results are
        // identical for every --jobs value.
        let rows: Vec<Vec<usize>> = pool.install(|| {
            (0..n_reps)
                .into_par_iter()
                .map(|r| -> Result<Vec<usize>> {
                    let mut model_cfg = model_template.clone();
                    model_cfg.seed = seed::derive(method_seed, 2 * r as u64);
                    let mut train_cfg = train_template.clone();
                    train_cfg.seed = seed::derive(method_seed, 2 * r as u64 + 1);
                    let (model, _) = train_stage1(
                        &model_cfg,
                        &reps.replicates[r],
                        &loss_cfg,
                        &temps,
                        &train_cfg,
                        None,
                    )?;
                    Ok(predict(&model, reps.test.features(), model.n_experts())?)
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let mut acc_sum = 0.0;
        for row in &rows {
            acc_sum += accuracy(row, reps.test.labels())?;
        }
        let mean_accuracy = acc_sum / n_reps as f64;
        let matrix = PredictionMatrix::from_rows(rows, reps.test.classes())?;
        let decomp = zero_one_decomposition(&matrix, reps.test.labels())?;
        let csv = reports::biasvar_csv(&decomp, &reps.profile);
        reports::write_text(&out.join(format!("biasvar_{}.csv", method.name)), &csv)?;
        let summary =
            reports::biasvar_json(&method.name, n_reps, &decomp, mean_accuracy, &reps.splits);
        reports::write_json(&out.join(format!("biasvar_{}.json", method.name)), &summary)?;
        summaries.insert(method.name.clone(), summary);
    }
    let report = json!({ "replicates": n_reps, "methods": Value::Object(summaries) });
    Ok(RunOutput { out_dir: out, report })
}

fn fmt4(v: &Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    }
}

/// "overall A many B medium C few D" with "-" for splits without instances.
pub fn fmt_split_block(v: &Value) -> String {
    format!(
        "overall {} many {} medium {} few {}",
        fmt4(&v["overall"]),
        fmt4(&v["many"]),
        fmt4(&v["medium"]),
        fmt4(&v["few"])
    )
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| LabError::Data(format!("malformed JSON in {}: {e}", path.display())))
}

/// A human summary of the artifacts in a run directory. Reads only; the
/// resolved config must exist, everything else is reported when present.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let resolved = dir.join("resolved_config.json");
    if !resolved.is_file() {
        return Err(LabError::Config(format!(
            "{} has no resolved_config.json; point report at a run directory",
            dir.display()
        )));
    }
    let cfg = read_json(&resolved)?;
    let mut lines = vec![format!("run directory: {}", dir.display())];
    let model = &cfg["model"];
    lines.push(format!(
        "model: {} experts, hidden {}, width factor {}, seed {}",
        model["n_experts"], model["hidden"], model["width_factor"], cfg["seed"]
    ));

    let profile = dir.join("profile.json");
    if profile.is_file() {
        let p = read_json(&profile)?;
        // Splits are stored as class-index lists; the summary only needs sizes.
        let count = |s: &str| p["splits"][s].as_array().map_or(0, Vec::len);
        lines.push(format!(
            "data: {} classes, {} train instances, imbalance factor {}, many/medium/few = {}/{}/{} classes",
            p["classes"],
            p["total"],
            fmt4(&p["imbalance_factor"]),
            count("many"),
            count("medium"),
            count("few")
        ));
    }

    let metrics = dir.join("metrics.csv");
    if metrics.is_file() {
        let text = fs::read_to_string(&metrics).map_err(|e| io_err(&metrics, e))?;
        match text.lines().last().filter(|_| text.lines().count() > 1) {
            Some(last) => {
                let cells: Vec<&str> = last.split(',').collect();
                if cells.len() == 6 {
                    lines.push(format!(
                        "last epoch {}: lr {}, total {}, classify {}, diversity {}, distill {}",
                        cells[0], cells[1], cells[2], cells[3], cells[4], cells[5]
                    ));
                }
            }
            None => lines.push("training: no epochs recorded".into()),
        }
    }

    for (file, label) in [("train_report.json", "trained"), ("eval_report.json", "evaluated")] {
        let path = dir.join(file);
        if path.is_file() {
            let r = read_json(&path)?;
            lines.push(format!("{label} train accuracy: {}", fmt_split_block(&r["train"]["accuracy"])));
            lines.push(format!("{label} test accuracy:  {}", fmt_split_block(&r["test"]["accuracy"])));
            lines.push(format!(
                "{label} test hardest-negative: {}",
                fmt_split_block(&r["test"]["hardest_negative"])
            ));
        }
    }

    let cost = dir.join("cost_report.json");
    if cost.is_file() {
        let c = read_json(&cost)?;
        lines.push(format!(
            "routing: mean experts {} of {}, relative cost {}, cascade {} vs full ensemble {}",
            fmt4(&c["mean_experts_used"]),
            c["n_experts"],
            fmt4(&c["relative_cost"]),
            fmt4(&c["cascade_accuracy"]["overall"]),
            fmt4(&c["full_ensemble_accuracy"]["overall"])
        ));
    }

    let mut biasvar: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("biasvar_") && n.ends_with(".json"))
        })
        .collect();
    biasvar.sort();
    for path in biasvar {
        let b = read_json(&path)?;
        let split = |v: &Value| match (v["bias"].as_f64(), v["variance"].as_f64()) {
            (Some(bias), Some(var)) => format!("bias {bias:.4} variance {var:.4}"),
            _ => "-".into(),
        };
        lines.push(format!(
            "biasvar {} ({} replicates): mean accuracy {}, overall {}, few {}",
            b["method"].as_str().unwrap_or("?"),
            b["replicates"],
            fmt4(&b["mean_accuracy"]),
            split(&b["overall"]),
            split(&b["few"])
        ));
    }
    Ok(lines.join("\n"))
}
