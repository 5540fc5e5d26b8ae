//! Experiment runner: dataset generation, training, evaluation,
//! ablation and robustness sweeps, and the built-in verification
//! suites. All heavy lifting lives in the library; this binary parses
//! arguments, wires files together, and prints results.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use ctssg::dataset::write_dataset;
use ctssg::experiment::{
    load_checkpoint, load_config, run_ablate, run_eval, run_kfold, run_robustness, run_train,
    AblationAxis, PerturbMode,
};
use ctssg::oracles::{run_suite, SUITE_NAMES};

#[derive(Parser)]
#[command(
    name = "ctssg",
    version,
    about = "Slice-graph spectral encoder: train, evaluate, and verify on synthetic volumes"
)]
struct Cli {
    /// Worker threads for batch parallelism (0 = one per core).
    /// Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset directory from an experiment config.
    GenData {
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Directory to create the dataset in.
        #[arg(long)]
        out: PathBuf,
        /// Volumes to generate; defaults to train_count + val_count.
        #[arg(long)]
        count: Option<usize>,
        /// Replace an existing dataset.
        #[arg(long)]
        force: bool,
    },
    /// Train a model; writes history, report, and checkpoints.
    Train {
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for run artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Read volumes from this dataset directory instead of
        /// generating them in memory.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue an interrupted run from its last checkpoint.
        #[arg(long)]
        resume: bool,
        /// Overwrite a completed run.
        #[arg(long)]
        force: bool,
        /// Run k-fold cross-validation over the pooled volumes
        /// instead of a single split.
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Evaluate a checkpoint and print the metrics report.
    Eval {
        /// Checkpoint directory (checkpoint_best or checkpoint_last).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory to evaluate on; defaults to the config's
        /// validation split.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write the report JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep an ablation axis: one training run per (value, seed).
    Ablate {
        /// Experiment config JSON used as the base model.
        #[arg(long)]
        config: PathBuf,
        /// Directory for the ablate_{axis}.csv files.
        #[arg(long)]
        out: PathBuf,
        /// Axis to sweep: K, q, L, operator, topology, components,
        /// or "all".
        #[arg(long, default_value = "all")]
        axis: String,
        /// Training seeds, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Evaluate a frozen checkpoint under axial shifts or added noise.
    Robustness {
        /// Checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Perturbation family: zshift or noise.
        #[arg(long)]
        mode: String,
        /// Grid points, comma separated; defaults to the documented
        /// sweep for the mode.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Dataset directory for the clean volumes; defaults to the
        /// config's validation split.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Write the CSV here as well as printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in verification suites against their oracles.
    OracleCheck {
        /// One of chebyshev, laplacian, gradients, metrics; all when
        /// omitted.
        #[arg(long)]
        suite: Option<String>,
    },
}

fn main() {
    // Die quietly when the reader closes the pipe, like any filter.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }

    match cli.command {
        Command::GenData { config, out, count, force } => {
            let cfg = load_config(&config)?;
            let count = count.unwrap_or(cfg.data.train_count + cfg.data.val_count);
            let index = write_dataset(&out, &cfg.synth, count, force)?;
            println!(
                "wrote {} volumes ({} labels each) to {}",
                index.count,
                index.config.labels.len(),
                out.display()
            );
        }
        Command::Train { config, out, data, resume, force, folds } => {
            let cfg = load_config(&config)?;
            match folds {
                Some(k) => {
                    let report = run_kfold::<f64>(&cfg, k, &out)?;
                    for fold in &report.folds {
                        println!(
                            "fold {}: macro_f1 {:.4} auroc {:.4}",
                            fold.fold, fold.metrics.macro_f1, fold.metrics.macro_auroc
                        );
                    }
                    println!(
                        "{k}-fold macro_f1 {:.4} +/- {:.4}",
                        report.mean_macro_f1, report.std_macro_f1
                    );
                }
                None => {
                    let report = run_train::<f64>(&cfg, &out, data.as_deref(), resume, force)?;
                    println!(
                        "run {}: {} steps, best step {} macro_f1 {}",
                        report.run_name,
                        report.steps_run,
                        report.best_step,
                        report
                            .best_macro_f1
                            .map(|v| format!("{v:.4}"))
                            .unwrap_or_else(|| "n/a".to_string()),
                    );
                    println!(
                        "parameters {}, graph edges {:?}; artifacts in {}",
                        report.param_count,
                        report.edge_counts,
                        out.display()
                    );
                }
            }
        }
        Command::Eval { checkpoint, data, out } => {
            let report = run_eval::<f64>(&checkpoint, data.as_deref(), out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate { config, out, axis, seeds } => {
            let cfg = load_config(&config)?;
            let axes: Vec<AblationAxis> = if axis == "all" {
                AblationAxis::ALL.to_vec()
            } else {
                vec![AblationAxis::from_name(&axis)?]
            };
            for axis in axes {
                let rows = run_ablate::<f64>(&cfg, axis, &seeds, &out)?;
                for row in &rows {
                    println!(
                        "{} = {} seed {}: macro_f1 {:.4} auroc {:.4}",
                        axis.name(),
                        row.axis_value,
                        row.seed,
                        row.macro_f1,
                        row.macro_auroc
                    );
                }
            }
            println!("CSV files written to {}", out.display());
        }
        Command::Robustness { checkpoint, mode, grid, data, out } => {
            let mode = match mode.as_str() {
                "zshift" => PerturbMode::Zshift,
                "noise" => PerturbMode::Noise,
                other => bail!("unknown mode {other:?}; use zshift or noise"),
            };
            let grid = match grid {
                Some(g) => g,
                None => {
                    let ckpt = load_checkpoint::<f64>(&checkpoint)?;
                    mode.default_grid(ckpt.config.synth.slices)
                }
            };
            let rows =
                run_robustness::<f64>(&checkpoint, mode, &grid, data.as_deref(), out.as_deref())?;
            println!("perturbation,macro_f1,auroc");
            for r in &rows {
                println!("{},{},{}", r.perturbation, r.macro_f1, r.macro_auroc);
            }
        }
        Command::OracleCheck { suite } => {
            let wanted: Vec<&str> = match suite.as_deref() {
                None | Some("all") => SUITE_NAMES.to_vec(),
                Some("cheb") => vec!["chebyshev"],
                Some("grad") => vec!["gradients"],
                Some(name) => vec![name],
            };
            let mut failed = false;
            for name in wanted {
                let report = run_suite(name)?;
                if report.passed() {
                    println!(
                        "{}: PASS ({} cases, max err {:.3e})",
                        report.name, report.cases, report.max_err
                    );
                } else {
                    failed = true;
                    println!(
                        "{}: FAIL ({} cases, max err {:.3e})",
                        report.name, report.cases, report.max_err
                    );
                    for f in &report.failures {
                        println!("  {f}");
                    }
                }
            }
            if failed {
                bail!("one or more verification suites failed");
            }
        }
    }
    Ok(())
}
