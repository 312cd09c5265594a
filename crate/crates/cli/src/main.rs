use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use qxg_roi::experiment::{
    ablate, compare_baselines, cross_validate, read_samples, read_scenes, write_samples, write_scenes, DatasetStats,
    ExperimentConfig, Report,
};
use qxg_roi::model::{FeaturizedGraph, Model};
use qxg_roi::qxg::build_samples;
use qxg_roi::synth::{generate_synthetic_dataset, SynthRule};
use qxg_roi::train::{evaluate, train, MetricsReport};

/// Relevant object identification on qualitative explainable graphs.
#[derive(Parser)]
#[command(name = "qxg-roi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic annotated scenes.
    Synth(SynthArgs),
    /// Build one labeled QXG per annotated frame.
    Build(BuildArgs),
    /// Train on a whole dataset and save the model.
    Train(TrainArgs),
    /// Evaluate a saved model on a dataset.
    Eval(EvalArgs),
    /// K-fold cross-validation.
    Cv(RunArgs),
    /// Cross-validation under each loss mode.
    Ablate(RunArgs),
    /// Graph model against AdaBoost and random forest.
    Baseline(RunArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of scenes; overrides `synth.n_scenes`.
    #[arg(long)]
    scenes: Option<usize>,
    /// `proximity_approach` or `contextual`.
    #[arg(long)]
    rule: Option<SynthRule>,
    /// Output directory for scene files and the manifest.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct BuildArgs {
    /// Directory of scene files.
    #[arg(long)]
    scenes: PathBuf,
    /// Output directory for sample files.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of built samples.
    #[arg(long)]
    data: PathBuf,
    /// Model checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of built samples.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Metrics report to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct RunArgs {
    /// Directory of built samples.
    #[arg(long)]
    data: PathBuf,
    /// Report to write.
    #[arg(long)]
    out: PathBuf,
    /// Folds trained in parallel; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    config: ConfigArg,
}

fn load_config(arg: &ConfigArg) -> Result<ExperimentConfig> {
    let cfg = match &arg.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let cfg = cfg.with_env_seed()?;
    let mut errors = cfg.validation_errors().into_iter();
    let Some(first) = errors.next() else {
        return Ok(cfg);
    };
    let all: Vec<String> = std::iter::once(first.to_string()).chain(errors.map(|e| e.to_string())).collect();
    let err = anyhow::Error::new(first);
    Err(if all.len() == 1 {
        err
    } else {
        err.context(format!("invalid config: {}", all.join("; ")))
    })
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_graphs(dir: &Path) -> Result<Vec<FeaturizedGraph>> {
    Ok(read_samples(dir)?.iter().map(FeaturizedGraph::from_labeled).collect())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.scenes {
        cfg.synth.n_scenes = n;
    }
    if let Some(rule) = a.rule {
        cfg.synth.rule = rule;
    }
    cfg.synth.validate()?;
    let scenes = generate_synthetic_dataset(cfg.seed, &cfg.synth)?;
    let manifest = write_scenes(&a.out, &scenes, cfg.seed, &cfg.synth)?;
    eprintln!("wrote {} scenes ({} samples) to {}", manifest.scenes.len(), manifest.samples, a.out.display());
    Ok(())
}

fn build(a: BuildArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let scenes = read_scenes(&a.scenes)?;
    let samples = build_samples(&scenes, cfg.window, &cfg.calculi)?;
    write_samples(&a.out, &samples)?;
    println!("{}", serde_json::to_string_pretty(&DatasetStats::of(&samples))?);
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config)?.resolved();
    let graphs = load_graphs(&a.data)?;
    let refs: Vec<&FeaturizedGraph> = graphs.iter().collect();
    let (model, history) = train(&refs, &cfg.model, &cfg.train)?;
    write_out(&a.out, &model.to_json_string())?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    let history_path = a.history.unwrap_or_else(|| a.out.with_extension("csv"));
    write_out(&history_path, &csv)?;
    eprintln!("trained {} epochs; final loss {:?}", history.len(), history.last());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let model = Model::load(&a.model)?;
    let graphs = load_graphs(&a.data)?;
    let refs: Vec<&FeaturizedGraph> = graphs.iter().filter(|g| g.star_len() > 0).collect();
    let metrics = evaluate(&model, &refs, cfg.train.threshold)?;
    write_out(&a.out, &Report::new(&cfg, MetricsReport::single(metrics)).to_json_string())
}

fn cv(a: RunArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let report = cross_validate(&cfg, &load_graphs(&a.data)?, a.jobs)?;
    eprintln!("mean roc_auc {:?}, recall {:.2}", report.result.roc_auc, report.result.recall);
    write_out(&a.out, &report.to_json_string())
}

fn ablate_cmd(a: RunArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let report = ablate(&cfg, &load_graphs(&a.data)?, a.jobs)?;
    write_out(&a.out, &report.to_json_string())
}

fn baseline(a: RunArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let report = compare_baselines(&cfg, &load_graphs(&a.data)?, a.jobs)?;
    let r = &report.result;
    eprintln!(
        "roc_auc gnn {:?} adaboost {:?} random_forest {:?}",
        r.gnn.roc_auc, r.adaboost.roc_auc, r.random_forest.roc_auc
    );
    write_out(&a.out, &report.to_json_string())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .any(|e| e.downcast_ref::<qxg_roi::Error>().is_some_and(qxg_roi::Error::is_validation));
    if validation {
        1
    } else {
        2
    }
}

/// The error chain joined by `: `, skipping causes already contained in
/// the message.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Build(a) => build(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Cv(a) => cv(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Baseline(a) => baseline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
