use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use ride_lab::config::CliOverrides;
use ride_lab::runner::{self, fmt_split_block, RunOutput};
use ride_lab::Result;

#[derive(Parser)]
#[command(
    name = "ride-lab",
    version,
    about = "Long-tail multi-expert training, dynamic expert routing, and bias/variance studies"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file (strict JSON; unknown keys are rejected).
    #[arg(long)]
    config: PathBuf,
    /// Master seed override. Leaves a pinned data_seed untouched.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Routing threshold override.
    #[arg(long)]
    threshold: Option<f64>,
}

impl RunArgs {
    fn overrides(&self) -> CliOverrides {
        CliOverrides {
            seed: self.seed,
            out: self.out.clone(),
            threshold: self.threshold,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the multi-expert model; writes checkpoint, metrics, and reports.
    Train(RunArgs),
    /// Train the routing gates on a frozen model checkpoint.
    RouteTrain {
        #[command(flatten)]
        run: RunArgs,
        /// Stage-1 model checkpoint.
        checkpoint: PathBuf,
    },
    /// Evaluate a checkpoint; optionally routed or capped to a prefix.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Model checkpoint to evaluate.
        checkpoint: PathBuf,
        /// Router checkpoint for cascaded inference.
        #[arg(long)]
        router: Option<PathBuf>,
        /// Use only the first EXPERTS experts (conflicts with --router).
        #[arg(long)]
        experts: Option<usize>,
    },
    /// Replicate trainings and the 0-1 bias/variance decomposition.
    Biasvar {
        #[command(flatten)]
        run: RunArgs,
        /// Worker pool size for replicate trainings; 0 uses all cores.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Train a student model against a teacher checkpoint's ensemble.
    Distill(RunArgs),
    /// Summarize the artifacts found in a run directory.
    Report {
        /// Run directory holding a resolved_config.json.
        #[arg(default_value = "runs")]
        dir: PathBuf,
    },
}

fn print_eval_sections(report: &Value) {
    println!("train accuracy: {}", fmt_split_block(&report["train"]["accuracy"]));
    println!("test accuracy:  {}", fmt_split_block(&report["test"]["accuracy"]));
    println!(
        "test hardest-negative: {}",
        fmt_split_block(&report["test"]["hardest_negative"])
    );
}

fn print_routing(report: &Value) {
    println!(
        "routing: mean experts {:.4} of {}, relative cost {:.4}",
        report["mean_experts_used"].as_f64().unwrap_or(f64::NAN),
        report["n_experts"],
        report["relative_cost"].as_f64().unwrap_or(f64::NAN),
    );
    println!(
        "cascade accuracy: {}",
        fmt_split_block(&report["cascade_accuracy"])
    );
    println!(
        "full ensemble accuracy: {}",
        fmt_split_block(&report["full_ensemble_accuracy"])
    );
}

fn finish(out: &RunOutput) {
    println!("artifacts: {}", out.out_dir.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train(args) => {
            let out = runner::cmd_train(&args.config, &args.overrides())?;
            println!(
                "trained {} experts for {} epochs",
                out.report["experts"], out.report["epochs"]
            );
            print_eval_sections(&out.report);
            finish(&out);
        }
        Cmd::Distill(args) => {
            let out = runner::cmd_distill(&args.config, &args.overrides())?;
            println!(
                "distilled {} experts for {} epochs",
                out.report["experts"], out.report["epochs"]
            );
            print_eval_sections(&out.report);
            finish(&out);
        }
        Cmd::RouteTrain { run, checkpoint } => {
            let out = runner::cmd_route_train(&run.config, &checkpoint, &run.overrides())?;
            print_routing(&out.report);
            finish(&out);
        }
        Cmd::Eval { run, checkpoint, router, experts } => {
            let out = runner::cmd_eval(
                &run.config,
                &checkpoint,
                router.as_deref(),
                experts,
                &run.overrides(),
            )?;
            println!("evaluated with {} experts", out.report["experts_used"]);
            print_eval_sections(&out.report);
            if !out.report["routing"].is_null() {
                print_routing(&out.report["routing"]);
            }
            finish(&out);
        }
        Cmd::Biasvar { run, jobs } => {
            let out = runner::cmd_biasvar(&run.config, jobs, &run.overrides())?;
            if let Some(methods) = out.report["methods"].as_object() {
                for (name, summary) in methods {
                    let block = |v: &Value| match (v["bias"].as_f64(), v["variance"].as_f64()) {
                        (Some(b), Some(var)) => format!("bias {b:.4} variance {var:.4}"),
                        _ => "-".into(),
                    };
                    println!(
                        "method {name}: mean accuracy {:.4}, overall {}, few {}",
                        summary["mean_accuracy"].as_f64().unwrap_or(f64::NAN),
                        block(&summary["overall"]),
                        block(&summary["few"]),
                    );
                }
            }
            finish(&out);
        }
        Cmd::Report { dir } => {
            println!("{}", runner::cmd_report(&dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // Usage errors must exit 1: clap's default of 2 is taken by data errors.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
