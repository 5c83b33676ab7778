//! `ainet`: generate synthetic bags, train, evaluate, run ablation grids and
//! self-checks.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 data or file format,
//! 3 numeric failure (including a failed self-check).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ainet_core::ablate::{run_grid, summary_csv, Grid};
use ainet_core::bag::{load_bags, read_manifest};
use ainet_core::metrics::{metrics_csv, predictions_csv, stratified_folds};
use ainet_core::synth::generate_dataset;
use ainet_core::train::{default_threads, evaluate, log_csv, pick, split, train};
use ainet_core::{selfcheck, Error, RunConfig, SavedModel, Selector, SynthConfig, Variant};

#[derive(Parser)]
#[command(name = "ainet", version, about = "Anchor-instance multiple-instance learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its manifest.
    Generate(GenerateArgs),
    /// Train on the training split of one fold.
    Train(TrainArgs),
    /// Evaluate a trained model on the test split of one fold.
    Evaluate(EvaluateArgs),
    /// Run an ablation grid; every cell is a full cross-validation.
    Ablate(AblateArgs),
    /// Run the built-in oracle checks.
    Selfcheck,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    bags: Option<usize>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    tumor_rate: Option<f64>,
    #[arg(long)]
    morphologies: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Defaults to `folds` from the config.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    selector: Option<Selector>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV log; defaults to the model path with a `.log.csv` extension.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    grid: Grid,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the available cores. Output does not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

enum Failure {
    Core(Error),
    Checks(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numeric(_) | Error::Contract(_) => 3,
        _ => 2,
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn create_parent(path: &Path) -> Result<(), Error> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }),
        None => Ok(()),
    }
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn generate(a: GenerateArgs) -> Result<(), Failure> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        n_bags: a.bags.unwrap_or(d.n_bags),
        n_instances: a.instances.unwrap_or(d.n_instances),
        dim: a.dim.unwrap_or(d.dim),
        n_classes: a.classes.unwrap_or(d.n_classes),
        tumor_rate: a.tumor_rate.unwrap_or(d.tumor_rate),
        n_morphologies: a.morphologies.unwrap_or(d.n_morphologies),
        noise_sigma: a.noise.unwrap_or(d.noise_sigma),
        seed: a.seed.unwrap_or(d.seed),
    };
    let manifest = generate_dataset(&cfg, &a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(v) = a.variant {
        cfg.train.pipeline.variant = v;
    }
    if let Some(s) = a.selector {
        cfg.train.pipeline.selector = s;
    }
    let folds = a.folds.unwrap_or(cfg.folds);
    if a.fold >= folds {
        return Err(Error::Config(format!("--fold {} out of range for {folds} folds", a.fold)).into());
    }
    let bags = load_bags(&read_manifest(&a.manifest, cfg.classes())?)?;
    let labels: Vec<usize> = bags.iter().map(|b| b.label).collect();
    let (train_idx, _) = split(&stratified_folds(&labels, folds, cfg.train.seed)?, a.fold);
    let trained = train(&pick(&bags, &train_idx), cfg.classes(), &cfg.train)?;
    let saved = SavedModel {
        params: trained.params,
        pipeline: cfg.train.pipeline,
        seed: cfg.train.seed,
    };
    create_parent(&a.out)?;
    saved.save(&a.out)?;
    let log = a.log.unwrap_or_else(|| a.out.with_extension("log.csv"));
    write(&log, &log_csv(&trained.log))?;
    if let Some(last) = trained.log.last() {
        println!(
            "trained {} on {} bags: loss {:.6}, train accuracy {:.4}",
            cfg.train.pipeline.variant,
            train_idx.len(),
            last.loss,
            last.train_accuracy
        );
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<(), Failure> {
    let model = SavedModel::load(&a.model)?;
    if a.fold >= a.folds {
        return Err(Error::Config(format!("--fold {} out of range for {} folds", a.fold, a.folds)).into());
    }
    let bags = load_bags(&read_manifest(&a.manifest, model.params.classes())?)?;
    let labels: Vec<usize> = bags.iter().map(|b| b.label).collect();
    let (_, test_idx) = split(&stratified_folds(&labels, a.folds, model.seed)?, a.fold);
    let report = evaluate(&model.params, &pick(&bags, &test_idx), &model.pipeline, a.fold)?;
    write(&a.out.join("metrics.csv"), &metrics_csv(std::slice::from_ref(&report))?)?;
    write(
        &a.out.join("predictions.csv"),
        &predictions_csv(&report.predictions, model.params.classes()),
    )?;
    println!(
        "fold {}: accuracy {:.4}, auc {}, f1 {:.4}",
        a.fold,
        report.accuracy,
        report.auc.map_or("NA".into(), |v| format!("{v:.4}")),
        report.f1
    );
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<(), Failure> {
    let cfg = load_config(a.config.as_deref())?;
    let bags = load_bags(&read_manifest(&a.manifest, cfg.classes())?)?;
    let threads = a.threads.unwrap_or_else(default_threads);
    let cells = run_grid(a.grid, &bags, cfg.classes(), cfg.folds, &cfg.train, threads)?;
    for c in &cells {
        let name = c.label.replace('=', "_");
        write(&a.out.join(a.grid.name()).join(format!("{name}.csv")), &metrics_csv(&c.reports)?)?;
    }
    let summary = a.out.join(format!("{}_summary.csv", a.grid.name()));
    write(&summary, &summary_csv(a.grid, &cells))?;
    println!("{}", summary.display());
    Ok(())
}

fn selfcheck_cmd() -> Result<(), Failure> {
    let checks = selfcheck::run(&selfcheck::Ops::default());
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    match checks.iter().filter(|c| !c.passed).count() {
        0 => Ok(()),
        n => Err(Failure::Checks(n)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Ablate(a) => ablate(a),
        Command::Selfcheck => selfcheck_cmd(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Checks(n)) => {
            eprintln!("{n} check(s) failed");
            ExitCode::from(3)
        }
    }
}
