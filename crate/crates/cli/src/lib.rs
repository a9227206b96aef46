//! Command implementations behind the `bbb` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bbb_core::audit::{audit, AuditReport};
use bbb_core::config::RunConfig;
use bbb_core::datamodel::labels::{Domain, Split};
use bbb_core::datamodel::split::{read_splits, split_dataset, write_splits};
use bbb_core::datamodel::{build_query_gallery, ingest_real, read_metadata, NormStats, SampleRecord};
use bbb_core::evaluator::{self, MetricReport};
use bbb_core::model::checkpoint;
use bbb_core::model::{CheckpointHeader, DType, TransReid};
use bbb_core::synthgen::{generate_dataset, DatasetManifest};
use bbb_core::trainer::{EpochLog, TrainMode, Trainer};
use clap::{Args, Parser, Subcommand};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "BBB_OUT_DIR";
const DEFAULT_OUT_ROOT: &str = "bbb-out";
pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";

#[derive(Debug, Parser)]
#[command(name = "bbb", version, about = "Damaged-bicycle re-identification toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (default 0; for training, `train.seed` from the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: $BBB_OUT_DIR/<command>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dotted `key=value` override, applied after the config file. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen,
    /// Re-split an existing dataset with the configured policy.
    Split {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train a network.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Training mode: bl, bl_real, dann, pada, reid_only or dd_only.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Compute retrieval and damage-detection metrics.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint to evaluate; repeat for multiple runs.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        split: Option<String>,
    },
    /// Render top-K retrieval results as an image grid and a table.
    Report {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Audit label frequencies against the configured probabilities.
    Stats {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Exit with a data error when any row falls outside its interval.
        #[arg(long)]
        strict: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Split { .. } => "split",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Report { .. } => "report",
            Command::Stats { .. } => "stats",
        }
    }

    /// Config section that un-prefixed override keys refer to.
    fn section(&self) -> &'static str {
        match self {
            Command::Gen | Command::Split { .. } | Command::Stats { .. } => "gen",
            Command::Train { .. } => "train",
            Command::Eval { .. } | Command::Report { .. } => "eval",
        }
    }
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}

/// Default location of a command's output (or of the dataset).
pub fn default_dir(name: &str) -> PathBuf {
    out_root().join(name)
}

/// Process exit code for an error: 1 config, 2 data, 3 invariant.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.chain()
        .find_map(|e| e.downcast_ref::<bbb_core::Error>())
        .map_or(2, bbb_core::Error::exit_code)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let cfg = RunConfig::load(c.config.as_deref(), &c.overrides, cli.command.section())?;
    let out = c.out.clone().unwrap_or_else(|| default_dir(cli.command.name()));
    let dataset_or_default = |d: &Option<PathBuf>| d.clone().unwrap_or_else(|| default_dir("gen"));
    match &cli.command {
        Command::Gen => {
            let m = cmd_gen(&cfg, c.seed.unwrap_or(0), &out)?;
            println!("{} images written to {}", m.counts.images, out.display());
        }
        Command::Split { dataset } => {
            let path = cmd_split(&cfg, c.seed.unwrap_or(0), dataset, c.out.as_deref())?;
            println!("splits written to {}", path.display());
        }
        Command::Train { dataset, mode } => {
            let mut cfg = cfg;
            if let Some(m) = mode {
                cfg.train.mode = TrainMode::parse(m)?;
            }
            if let Some(seed) = c.seed {
                cfg.train.seed = seed;
            }
            let logs = cmd_train(&cfg, &dataset_or_default(dataset), &out)?;
            if let Some(last) = logs.last() {
                println!("trained {} epochs; final loss {:.4}", logs.len(), last.losses["total"]);
            }
        }
        Command::Eval { dataset, checkpoints, split } => {
            let mut cfg = cfg;
            if let Some(s) = split {
                cfg.eval.split = s.clone();
            }
            let report = cmd_eval(&cfg, &dataset_or_default(dataset), checkpoints, &out)?;
            for (k, v) in report.summary() {
                println!("{k:<24} {v:.4}");
            }
        }
        Command::Report { dataset, checkpoint, split, top_k } => {
            let mut cfg = cfg;
            if let Some(s) = split {
                cfg.eval.split = s.clone();
            }
            if let Some(k) = top_k {
                cfg.eval.top_k = *k;
            }
            cmd_report(&cfg, &dataset_or_default(dataset), checkpoint, &out)?;
            println!("retrieval report written to {}", out.display());
        }
        Command::Stats { dataset, strict } => {
            let report = cmd_stats(&cfg, &dataset_or_default(dataset), c.out.as_deref())?;
            print!("{}", report.to_table());
            if *strict && !report.all_pass() {
                return Err(bbb_core::Error::data("label frequencies outside their intervals").into());
            }
        }
    }
    Ok(())
}

pub fn cmd_gen(cfg: &RunConfig, seed: u64, out: &Path) -> Result<DatasetManifest> {
    let manifest = generate_dataset(&cfg.gen, seed, out)?;
    Ok(manifest)
}

/// Re-apply the split policy to a dataset's metadata and write `splits.json`
/// (into `out`, or the dataset directory).
pub fn cmd_split(cfg: &RunConfig, seed: u64, dataset: &Path, out: Option<&Path>) -> Result<PathBuf> {
    let records = read_metadata(dataset)?;
    let library = cfg.gen.load_library()?;
    cfg.gen.validate(&library)?;
    let policy = if cfg.gen.split.is_empty() {
        let mut models: Vec<String> = records.iter().filter_map(|r| r.model.clone()).collect();
        models.sort();
        models.dedup();
        bbb_core::datamodel::SplitPolicy::all_train(&models)
    } else {
        cfg.gen.split.clone()
    };
    let split = split_dataset(&records, &policy, seed)?;
    let dir = out.unwrap_or(dataset);
    create_dir(dir)?;
    let path = dir.join("splits.json");
    write_splits(&path, &split, seed)?;
    Ok(path)
}

/// Dataset records with `splits.json` applied when present.
pub fn load_dataset(dataset: &Path) -> Result<Vec<SampleRecord>> {
    let mut records = read_metadata(dataset)?;
    let splits = dataset.join("splits.json");
    if splits.exists() {
        read_splits(&splits)?.apply(&mut records);
    }
    Ok(records)
}

fn manifest_normalization(dataset: &Path, records: &[SampleRecord]) -> Result<NormStats> {
    match DatasetManifest::read(dataset).ok().and_then(|m| m.normalization) {
        Some(n) => Ok(n),
        None => Ok(bbb_core::datamodel::compute_normalization(records, None)?),
    }
}

/// Real photographs from the configured directory, if any.
pub fn load_real(cfg: &RunConfig) -> Result<Vec<SampleRecord>> {
    match (&cfg.real.images, &cfg.real.labels) {
        (Some(images), Some(labels)) => Ok(ingest_real(images, labels, cfg.real.split_seed)?),
        (None, None) => Ok(Vec::new()),
        _ => Err(bbb_core::Error::config("real.images and real.labels must be given together").into()),
    }
}

fn in_split(records: &[SampleRecord], split: Split) -> Vec<SampleRecord> {
    records.iter().filter(|r| r.split == split).cloned().collect()
}

/// Train and write `checkpoint.safetensors`, `epochs.jsonl`, `timing.jsonl`
/// and the resolved `config.toml` into `out`.
pub fn cmd_train(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<Vec<EpochLog>> {
    cfg.train.validate()?;
    let real_all = load_real(cfg)?;
    if cfg.train.mode.needs_real() && real_all.is_empty() {
        bail!(bbb_core::Error::config(format!(
            "mode `{}` needs real images; set real.images and real.labels",
            cfg.train.mode.name()
        )));
    }
    let records = load_dataset(dataset)?;
    let synthetic = in_split(&records, Split::Train);
    let real = in_split(&real_all, Split::RealTrain);
    let norm = manifest_normalization(dataset, &records)?;
    let template = cfg.model.resolve()?;
    create_dir(out)?;
    write_file(&out.join("config.toml"), cfg.to_toml()?)?;

    let mut trainer = Trainer::new(&template, cfg.train.clone(), &synthetic, &real, norm)?;
    let mut epochs = std::fs::File::create(out.join("epochs.jsonl")).context("creating epochs.jsonl")?;
    let mut timing = std::fs::File::create(out.join("timing.jsonl")).context("creating timing.jsonl")?;
    let every = cfg.train.checkpoint_every;
    let logs = trainer.run(|log, t| {
        let line = serde_json::to_string(log)?;
        let io = |e: std::io::Error| bbb_core::Error::io("writing training log", e);
        writeln!(epochs, "{line}").map_err(io)?;
        writeln!(timing, "{}", serde_json::json!({"epoch": log.epoch, "seconds": log.seconds})).map_err(io)?;
        if every > 0 && (log.epoch + 1) % every == 0 && log.epoch + 1 < t.config().epochs {
            let path = out.join(format!("checkpoint_epoch{}.safetensors", log.epoch + 1));
            checkpoint::save(&path, t.model(), &t.checkpoint_header()?)?;
        }
        Ok(())
    })?;
    checkpoint::save(&out.join(CHECKPOINT_FILE), trainer.model(), &trainer.checkpoint_header()?)?;
    Ok(logs)
}

fn parse_split(name: &str) -> Result<Split> {
    Ok(Split::parse(name)?)
}

fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, TransReid)> {
    checkpoint::load(path, DType::F32).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Synthetic and real evaluation records for the configured split.
fn eval_records(cfg: &RunConfig, dataset: &Path) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    let split = parse_split(&cfg.eval.split)?;
    let real_all = load_real(cfg)?;
    let is_real_split = matches!(split, Split::RealTrain | Split::RealVal | Split::RealTest);
    if is_real_split {
        if real_all.is_empty() {
            bail!(bbb_core::Error::config(format!("split `{}` needs real images", cfg.eval.split)));
        }
        return Ok((Vec::new(), in_split(&real_all, split)));
    }
    let synthetic = in_split(&load_dataset(dataset)?, split);
    let real = match &cfg.eval.real_split {
        Some(s) if !real_all.is_empty() => in_split(&real_all, parse_split(s)?),
        _ => Vec::new(),
    };
    Ok((synthetic, real))
}

fn check_normalization(dataset: &Path, header: &CheckpointHeader, path: &Path) -> Result<()> {
    if let Some(n) = DatasetManifest::read(dataset).ok().and_then(|m| m.normalization) {
        if n != header.normalization {
            bail!(bbb_core::Error::Checkpoint(format!(
                "{} was trained with different normalisation statistics than {}",
                path.display(),
                dataset.display()
            )));
        }
    }
    Ok(())
}

/// Evaluate checkpoints and write `report.json` (plus `embeddings.csv` when enabled).
pub fn cmd_eval(cfg: &RunConfig, dataset: &Path, checkpoints: &[PathBuf], out: &Path) -> Result<MetricReport> {
    let (synthetic, real) = eval_records(cfg, dataset)?;
    let loaded: Vec<(CheckpointHeader, TransReid)> = checkpoints.iter().map(|p| load_checkpoint(p)).collect::<Result<_>>()?;
    if !synthetic.is_empty() {
        for ((h, _), p) in loaded.iter().zip(checkpoints) {
            check_normalization(dataset, h, p)?;
        }
    }
    let runs: Vec<(&CheckpointHeader, &TransReid)> = loaded.iter().map(|(h, m)| (h, m)).collect();
    let report = evaluator::evaluate(&runs, &cfg.eval.split, &synthetic, &real)?;
    create_dir(out)?;
    report.write(&out.join("report.json"))?;
    if cfg.eval.export_embeddings {
        let (h, m) = runs[0];
        if let Some(e) = evaluator::infer(m, h, &synthetic)?.embeddings {
            evaluator::write_embeddings(&out.join("embeddings.csv"), &synthetic, &e)?;
        }
    }
    Ok(report)
}

/// Write `retrieval.png` and `retrieval.tsv` for one checkpoint.
pub fn cmd_report(cfg: &RunConfig, dataset: &Path, checkpoint_path: &Path, out: &Path) -> Result<Vec<evaluator::RetrievalRow>> {
    let (synthetic, _) = eval_records(cfg, dataset)?;
    let (header, model) = load_checkpoint(checkpoint_path)?;
    check_normalization(dataset, &header, checkpoint_path)?;
    let qg = build_query_gallery(&synthetic);
    if qg.is_empty() {
        bail!(bbb_core::Error::data(format!("split `{}` has no before/after pairs", cfg.eval.split)));
    }
    let run = evaluator::run_reid(&model, &header, &qg)?;
    let rows = evaluator::retrieval_rows(&qg, &run.rankings, cfg.eval.top_k)?;
    create_dir(out)?;
    write_file(&out.join("retrieval.tsv"), evaluator::retrieval_table(&rows))?;
    let shown = &rows[..rows.len().min(cfg.eval.max_rows.max(1))];
    let grid = evaluator::retrieval_grid(&qg, shown, cfg.eval.tile)?;
    bbb_core::imageio::save_rgb(&grid, &out.join("retrieval.png"))?;
    Ok(rows)
}

/// Audit a dataset; probabilities come from its manifest when available.
pub fn cmd_stats(cfg: &RunConfig, dataset: &Path, out: Option<&Path>) -> Result<AuditReport> {
    let records = read_metadata(dataset)?;
    let probs = match DatasetManifest::read(dataset) {
        Ok(m) => m.config.probs,
        Err(_) => {
            log::warn!("no readable manifest in {}; auditing against configured probabilities", dataset.display());
            cfg.gen.probs.clone()
        }
    };
    let synthetic: Vec<SampleRecord> = records.into_iter().filter(|r| r.domain == Domain::Synthetic).collect();
    let report = audit(&synthetic, &probs);
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("stats.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(report)
}
