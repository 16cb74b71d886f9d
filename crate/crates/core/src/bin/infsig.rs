//! Command-line driver. Every subcommand wraps one library operation; `run`
//! executes the whole cached pipeline from a TOML config.
//!
//! Exit status: 0 on success, 1 on invalid input, 2 on runtime failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use infsig::artifact;
use infsig::data::{stratified_split, stratified_subsample};
use infsig::eval::{ratio_sweep, worker_count};
use infsig::glitch::{Corruption, ErrorTable, GlitchSpec, GlitchType};
use infsig::influence::{tracin, InfluenceMode, InfluenceTensor};
use infsig::model::{train, Architecture, CheckpointTrail, ModelConfig};
use infsig::pipeline::{
    load_dataset, load_for_evaluation, rank_signals, run_pipeline, save_dataset, save_errors,
    score_rankings, write_results_csv, DataSource, ExperimentConfig, RowContext, SplitOrder,
};
use infsig::signals::{write_rankings_csv, Signal};
use infsig::{Error, Result};

#[derive(Parser)]
#[command(name = "infsig", version, about = "Glitch injection, TracIn influence and influence-signal ranking")]
struct Cli {
    /// Master seed for every random step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment config (TOML); its sections replace the per-command flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate blobs or ingest a CSV, then subsample and split into train.csv / validation.csv.
    Generate(GenerateArgs),
    /// Contaminate a training set; writes train.csv and errors.csv.
    Inject(InjectArgs),
    /// Train with checkpointing; writes trail.bin.
    Train(TrainArgs),
    /// Compute the TracIn tensor; writes tensor.bin and influence.csv.
    Influence(InfluenceArgs),
    /// Rank training samples by influence signals; writes rankings.csv.
    Signals(SignalsArgs),
    /// Score rankings against an error table; writes results.csv.
    Evaluate(EvaluateArgs),
    /// Ratio x seed sweep over a config (pool size from INFSIG_WORKERS); writes sweep.csv and plot.csv.
    Sweep(SweepArgs),
    /// Run the full cached pipeline from --config.
    Run,
}

#[derive(Args)]
struct GenerateArgs {
    /// Source CSV; blobs are generated when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Label column of the source CSV.
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    subsample_fraction: f64,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Split before subsampling instead of after.
    #[arg(long)]
    split_first: bool,
    /// Keep generated blobs in cluster units instead of standardizing them.
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct InjectArgs {
    /// Training CSV to contaminate.
    #[arg(long)]
    train: PathBuf,
    /// Existing error table to chain onto.
    #[arg(long)]
    errors: Option<PathBuf>,
    /// uniform_noise, class_dependent_noise, near_ca, far_ca or outlier.
    #[arg(long = "type")]
    glitch_type: Option<GlitchType>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    source_class: Option<usize>,
    #[arg(long)]
    target_class: Option<usize>,
    /// brightness or stripe.
    #[arg(long)]
    corruption: Option<Corruption>,
    #[arg(long)]
    magnitude: Option<f64>,
    /// Far-cluster pool for far_ca, in the layout written by `generate`.
    #[arg(long)]
    foreign: Option<PathBuf>,
    /// Validation set whose ids merged far_ca samples must avoid.
    #[arg(long)]
    validation: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// logistic or mlp.
    #[arg(long, default_value = "logistic")]
    architecture: Architecture,
    #[arg(long, default_value_t = 32)]
    hidden_units: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1.0)]
    lr_decay: f64,
}

#[derive(Args)]
struct InfluenceArgs {
    #[arg(long)]
    trail: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    validation: PathBuf,
    /// paper (eta / batch size) or checkpoint (eta).
    #[arg(long, default_value = "paper")]
    mode: InfluenceMode,
}

#[derive(Args)]
struct SignalsArgs {
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    validation: PathBuf,
    /// Comma-separated subset of SI, MI, AAI, GD-class.
    #[arg(long, value_delimiter = ',', default_value = "SI,MI,AAI,GD-class")]
    signals: Vec<Signal>,
    /// Only the cumulative scope, no per-epoch rankings.
    #[arg(long)]
    cumulative_only: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    rankings: PathBuf,
    #[arg(long)]
    errors: PathBuf,
    /// Dataset label for the results table.
    #[arg(long, default_value = "data")]
    dataset: String,
    /// Model label for the results table.
    #[arg(long, default_value = "model")]
    model: String,
}

#[derive(Args)]
struct SweepArgs {
    /// Overrides the config's sweep ratios.
    #[arg(long, value_delimiter = ',')]
    ratios: Vec<f64>,
    /// Overrides the config's sweep seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

fn load_config(cli: &Cli) -> Result<Option<ExperimentConfig>> {
    match &cli.config {
        None => Ok(None),
        Some(p) => {
            let mut cfg = ExperimentConfig::load(p)?;
            cfg.seed = if cli.seed != 0 { cli.seed } else { cfg.seed };
            cfg.validate()?;
            Ok(Some(cfg))
        }
    }
}

fn out_dir(cli: &Cli, config: Option<&ExperimentConfig>) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .or_else(|| config.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn need_config(config: Option<ExperimentConfig>, what: &str) -> Result<ExperimentConfig> {
    config.ok_or_else(|| Error::Config(format!("`{what}` needs --config")))
}

fn generate(cli: &Cli, a: &GenerateArgs, config: Option<&ExperimentConfig>, out: &Path) -> Result<()> {
    let split = if let Some(cfg) = config {
        infsig::pipeline::prepare(cfg)?
    } else {
        let source = match &a.input {
            Some(p) => DataSource::csv(p, &a.label_column),
            None => DataSource {
                standardize: !a.raw,
                ..DataSource::blobs(a.n, a.dims, a.classes, a.separation)
            },
        };
        source.validate("input")?;
        let full = source.load(cli.seed)?;
        let order = if a.split_first {
            SplitOrder::SplitThenSubsample
        } else {
            SplitOrder::SubsampleThenSplit
        };
        let sub = |d: infsig::Dataset, s: u64| {
            if a.subsample_fraction < 1.0 {
                stratified_subsample(&d, a.subsample_fraction, s)
            } else {
                Ok(d)
            }
        };
        match order {
            SplitOrder::SubsampleThenSplit => stratified_split(&sub(full, cli.seed)?, a.train_fraction, cli.seed)?,
            SplitOrder::SplitThenSubsample => {
                let s = stratified_split(&full, a.train_fraction, cli.seed)?;
                infsig::SplitPair {
                    train: sub(s.train, cli.seed)?,
                    validation: sub(s.validation, cli.seed.wrapping_add(1))?,
                }
            }
        }
    };
    let parents = match &a.input {
        Some(p) if config.is_none() => vec![artifact::load_meta(p)?],
        _ => Vec::new(),
    };
    let parents: Vec<_> = parents.iter().collect();
    save_dataset(&split.train, &out.join("train.csv"), &parents)?;
    save_dataset(&split.validation, &out.join("validation.csv"), &parents)?;
    println!(
        "train: {} samples, validation: {} samples, {} classes",
        split.train.len(),
        split.validation.len(),
        split.train.class_count()
    );
    Ok(())
}

fn inject(cli: &Cli, a: &InjectArgs, config: Option<&ExperimentConfig>, out: &Path) -> Result<()> {
    let (clean, clean_meta) = load_dataset(&a.train)?;
    let reserved = match &a.validation {
        Some(p) => load_dataset(p)?.0.max_id(),
        None => None,
    };
    let (data, mut errors) = match config {
        Some(cfg) => infsig::pipeline::inject(cfg, &clean, reserved)?,
        None => {
            let (Some(t), Some(eps)) = (a.glitch_type, a.epsilon) else {
                return Err(Error::Config("inject needs --type and --epsilon (or --config)".into()));
            };
            let spec = GlitchSpec {
                source_class: a.source_class,
                target_class: a.target_class,
                corruption: a.corruption,
                magnitude: a.magnitude,
                ..GlitchSpec::new(t, eps)
            };
            let foreign = match &a.foreign {
                Some(p) => Some(load_dataset(p)?.0),
                None => None,
            };
            spec.apply_with_first_id(&clean, foreign.as_ref(), reserved.map(|m| m + 1), cli.seed)?
        }
    };
    if let Some(prev) = &a.errors {
        errors = ErrorTable::read_csv(prev)?.chain(&errors);
    }
    errors.validate(&data)?;
    let train_meta = save_dataset(&data, &out.join("train.csv"), &[&clean_meta])?;
    save_errors(&errors, &out.join("errors.csv"), &clean_meta, &train_meta)?;
    println!(
        "{} of {} samples glitched ({:.4})",
        errors.glitched_count(),
        errors.len(),
        errors.ratio()
    );
    Ok(())
}

fn train_cmd(cli: &Cli, a: &TrainArgs, config: Option<&ExperimentConfig>, out: &Path) -> Result<()> {
    let (data, meta) = load_dataset(&a.train)?;
    let trail = match config {
        Some(cfg) => infsig::pipeline::fit(cfg, &data)?,
        None => {
            let mc = ModelConfig {
                architecture: a.architecture,
                hidden_units: a.hidden_units,
                learning_rate: a.learning_rate,
                epochs: a.epochs,
                batch_size: a.batch_size,
                seed: cli.seed,
                lr_decay: a.lr_decay,
            };
            train(&data, &mc)?
        }
    };
    let path = out.join("trail.bin");
    trail.save(&path)?;
    artifact::seal(&path, "checkpoint_trail", &[&meta], BTreeMap::new(), BTreeMap::new())?;
    for (t, loss) in trail.epoch_losses.iter().enumerate() {
        println!("epoch {t}: loss {loss:.6}");
    }
    Ok(())
}

fn influence(a: &InfluenceArgs, config: Option<&ExperimentConfig>, out: &Path) -> Result<()> {
    let (data, train_meta) = load_dataset(&a.train)?;
    let (validation, val_meta) = load_dataset(&a.validation)?;
    let trail_meta = artifact::load_meta(&a.trail)?;
    if trail_meta.kind != "external" && !trail_meta.descends_from(&train_meta.sha256) {
        return Err(Error::ChainMismatch(
            "the trail was not trained on this training set".into(),
        ));
    }
    let trail = CheckpointTrail::load(&a.trail)?;
    let mode = config.map_or(a.mode, |c| c.influence_mode);
    let tensor = tracin(&trail, &data, &validation, mode)?;
    let parents = [&trail_meta, &val_meta];
    let path = out.join("tensor.bin");
    tensor.save(&path)?;
    artifact::seal(&path, "influence_tensor", &parents, BTreeMap::new(), BTreeMap::new())?;
    let path = out.join("influence.csv");
    tensor.write_cumulative_csv(&path)?;
    artifact::seal(&path, "influence_table", &parents, BTreeMap::new(), BTreeMap::new())?;
    println!(
        "{} epochs x {} train x {} validation",
        tensor.epochs(),
        tensor.n_train(),
        tensor.n_val()
    );
    Ok(())
}

fn signals(a: &SignalsArgs, config: Option<&ExperimentConfig>, out: &Path) -> Result<()> {
    let (data, _) = load_dataset(&a.train)?;
    let (validation, _) = load_dataset(&a.validation)?;
    let tensor_meta = artifact::load_meta(&a.tensor)?;
    let tensor = InfluenceTensor::load(&a.tensor)?;
    let cfg = match config {
        Some(c) => c.clone(),
        None => {
            let mut c = ExperimentConfig::from_toml_str(
                "name = \"cli\"\n[data]\nsource = \"blobs\"\n[model]\narchitecture = \"logistic\"\nlearning_rate = 1.0\nepochs = 1\nbatch_size = 1\n",
            )?;
            c.signals = a.signals.clone();
            c.per_epoch = !a.cumulative_only;
            c
        }
    };
    let rankings = rank_signals(&cfg, &tensor, data.labels(), validation.labels())?;
    let path = out.join("rankings.csv");
    write_rankings_csv(&rankings, &path)?;
    artifact::seal(&path, "rankings", &[&tensor_meta], BTreeMap::new(), BTreeMap::new())?;
    println!("{} rankings over {} samples", rankings.len(), tensor.n_train());
    Ok(())
}

fn evaluate(cli: &Cli, a: &EvaluateArgs, config: Option<&ExperimentConfig>, out: &Path) -> Result<()> {
    let (rankings, errors) = load_for_evaluation(&a.rankings, &a.errors)?;
    let ctx = match config {
        Some(c) => c.row_context(&errors),
        None => RowContext::from_errors(&a.dataset, &a.model, cli.seed, &errors),
    };
    let rows = score_rankings(&ctx, &rankings, &errors, 0)?;
    write_results_csv(&rows, &out.join("results.csv"))?;
    for r in rows.iter().filter(|r| r.epoch_scope == infsig::Scope::Cumulative) {
        println!("{:<9} F1 {:.4}", r.signal.to_string(), r.f1);
    }
    Ok(())
}

fn sweep(a: &SweepArgs, config: ExperimentConfig, out: &Path) -> Result<()> {
    let (mut ratios, mut seeds) = config
        .sweep
        .as_ref()
        .map(|s| (s.ratios.clone(), s.seeds.clone()))
        .unwrap_or_default();
    if !a.ratios.is_empty() {
        ratios = a.ratios.clone();
    }
    if !a.seeds.is_empty() {
        seeds = a.seeds.clone();
    }
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    w.write_record(infsig::pipeline::RESULT_COLUMNS)?;
    eprintln!("{} experiments on {} workers", ratios.len() * seeds.len(), worker_count());
    let table = ratio_sweep(&config, &ratios, &seeds, |rows| {
        for r in rows {
            w.write_record([
                r.dataset.clone(),
                r.model.clone(),
                r.glitch_type.clone(),
                r.ratio.to_string(),
                r.seed.to_string(),
                r.signal.to_string(),
                r.epoch_scope.to_string(),
                r.f1.to_string(),
                r.runtime_ms.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })
    })?;
    table.write_plot_csv(&out.join("plot.csv"))?;
    for c in table.cells.iter().filter(|c| c.epoch_scope == infsig::Scope::Cumulative) {
        println!("ratio {:<6} {:<9} mean F1 {:.4} ({} runs)", c.ratio, c.signal.to_string(), c.mean_f1, c.runs);
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Run => {
            let cfg = need_config(config, "run")?;
            let out = out_dir(cli, Some(&cfg))?;
            let report = run_pipeline(&cfg, &out)?;
            for s in &report.stages {
                println!("{:<10} {:?}  {}", s.stage, s.status, s.dir.display());
            }
            println!("results: {}", report.results.display());
            Ok(())
        }
        Command::Sweep(a) => {
            let cfg = need_config(config, "sweep")?;
            let out = out_dir(cli, Some(&cfg))?;
            sweep(a, cfg, &out)
        }
        Command::Generate(a) => generate(cli, a, config.as_ref(), &out_dir(cli, config.as_ref())?),
        Command::Inject(a) => inject(cli, a, config.as_ref(), &out_dir(cli, config.as_ref())?),
        Command::Train(a) => train_cmd(cli, a, config.as_ref(), &out_dir(cli, config.as_ref())?),
        Command::Influence(a) => influence(a, config.as_ref(), &out_dir(cli, config.as_ref())?),
        Command::Signals(a) => signals(a, config.as_ref(), &out_dir(cli, config.as_ref())?),
        Command::Evaluate(a) => evaluate(cli, a, config.as_ref(), &out_dir(cli, config.as_ref())?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
