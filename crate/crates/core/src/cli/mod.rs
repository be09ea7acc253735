//! `ppt` command line: `pretrain`, `tune`, `eval`, `sweep`, `interpret`.
//!
//! Exit codes: 0 success, 2 configuration, file, data or shape errors,
//! 3 numeric errors during a run.

pub mod metrics;
pub mod sweep;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::Split;
use crate::encoders::Vocabulary;
use crate::error::{Error, Result};
use crate::prompt::nearest_words;
use crate::train::run::{load_dataset, window_means};
use crate::train::{count_learnable, evaluate, pretrain, tune, Checkpoint, FeatureSplit, Mode, Model, RunConfig};

pub use metrics::{read_metrics, MetricsRecord, MetricsWriter, SeedTable};
pub use sweep::{read_table, write_table, SweepAxis, SweepRow};

const LOG_EVERY: usize = 50;
pub const CHECKPOINT_FILE: &str = "checkpoint.ppt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Parser)]
#[command(name = "ppt", version, about = "Prompt tuning over a frozen text/image/point backbone")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Validate and report, without training or writing files.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// OFF directory laid out as `<root>/<class>/<split>/*.off`.
    #[arg(long, global = true, conflicts_with = "synthetic")]
    pub data_root: Option<PathBuf>,
    /// Use the built-in synthetic shapes even if the config names a data root.
    #[arg(long, global = true)]
    pub synthetic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Contrastive pre-training of the point encoder.
    Pretrain,
    /// Prompt (and adapter) tuning on a pre-trained backbone.
    Tune {
        /// Backbone checkpoint from `pretrain`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Test-split accuracy of a tuned checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One tuning run per value of an axis.
    Sweep {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated values replacing the axis defaults.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
    },
    /// Nearest vocabulary word of every learned context vector.
    Interpret {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NumericDomain { .. } | Error::DegenerateVector { .. } => 3,
        _ => 2,
    }
}

/// Parses `args` (program name first) and runs the command, writing the
/// human summary to `out`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run() -> i32 {
    run_with(std::env::args_os(), &mut std::io::stdout())
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(io_err)?
    };
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Pretrain => cmd_pretrain(cli, out).map(|_| 0),
        Command::Tune { checkpoint } => cmd_tune(cli, checkpoint.as_deref(), out).map(|_| 0),
        Command::Eval { checkpoint } => cmd_eval(cli, checkpoint, out).map(|_| 0),
        Command::Sweep {
            checkpoint,
            axis,
            values,
        } => cmd_sweep(cli, checkpoint.as_deref(), *axis, values.clone(), out),
        Command::Interpret { checkpoint } => cmd_interpret(checkpoint, out).map(|_| 0),
    }
}

fn apply_overrides(cli: &Cli, cfg: &mut RunConfig) {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(root) = &cli.data_root {
        cfg.data_root = Some(root.clone());
    }
    if cli.synthetic {
        cfg.data_root = None;
    }
}

/// Config from `--config` with overrides applied, checked against `mode`.
pub fn resolve_config(cli: &Cli, mode: Mode) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("config", "--config is required"))?;
    let mut cfg = RunConfig::load(path)?;
    apply_overrides(cli, &mut cfg);
    cfg.validate()?;
    if cfg.mode != mode {
        return Err(Error::config("mode", format!("this command needs mode = \"{}\"", mode.as_str())));
    }
    Ok(cfg)
}

pub fn run_id(command: &str, cfg: &RunConfig) -> String {
    format!("{command}-{}", &cfg.hash()[..12])
}

fn run_dir(cli: &Cli, id: &str) -> Result<PathBuf> {
    let dir = cli.out_dir.join(id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn print_learnable(out: &mut dyn Write, model: &Model) -> Result<()> {
    let count = count_learnable(model);
    say!(out, "learnable parameters: {}", count.total);
    for (group, n) in &count.groups {
        say!(out, "  {group:<14} {n}");
    }
    Ok(())
}

/// Runs `body` with a step callback that streams window-mean losses; the
/// first write error is returned after the loop.
fn with_loss_stream<T>(
    writer: &mut MetricsWriter,
    body: impl FnOnce(&mut dyn FnMut(usize, f64)) -> Result<T>,
) -> Result<T> {
    let mut window = Vec::with_capacity(LOG_EVERY);
    let mut failure = None;
    let result = body(&mut |step, loss| {
        window.push(loss);
        if window.len() == LOG_EVERY {
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            window.clear();
            let m = BTreeMap::from([("loss".to_string(), loss), ("loss_window_mean".to_string(), mean)]);
            if let Err(e) = writer.emit(step as u64 + 1, m) {
                failure.get_or_insert(e);
            }
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(result),
    }
}

fn cmd_pretrain(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(cli, Mode::Pretrain)?;
    let mut model = Model::backbone(&cfg, Vocabulary::default())?;
    model.prepare_pretraining();
    if cli.dry_run {
        say!(out, "config ok ({}), hash {}", cfg.mode.as_str(), cfg.hash());
        return print_learnable(out, &model);
    }
    let ds = load_dataset(&cfg)?;
    let id = run_id("pretrain", &cfg);
    let dir = run_dir(cli, &id)?;
    let mut writer = MetricsWriter::create(dir.join(METRICS_FILE), &id, &cfg)?;
    let report = with_loss_stream(&mut writer, |cb| pretrain(&cfg, &mut model, &ds, cb))?;
    let windows = window_means(&report.losses, LOG_EVERY);
    let first = windows.first().or(report.losses.first()).copied().unwrap_or(f64::NAN);
    let last = windows.last().or(report.losses.last()).copied().unwrap_or(f64::NAN);
    writer.emit(
        cfg.steps as u64,
        BTreeMap::from([
            ("initial_loss".to_string(), first),
            ("final_loss".to_string(), last),
        ]),
    )?;
    let path = dir.join(CHECKPOINT_FILE);
    Checkpoint::capture(&model, Some(&report.optimizer), &cfg).save(&path)?;
    say!(out, "pretrain {id}: loss {first:.4} -> {last:.4} over {} steps", cfg.steps);
    say!(out, "checkpoint {}", path.display());
    Ok(())
}

/// Backbone from a pre-training checkpoint with `cfg`'s tuning heads absent.
fn load_backbone(cfg: &RunConfig, path: &Path) -> Result<Model> {
    let ckpt = Checkpoint::load(path)?;
    let vocab = Vocabulary::from_words(ckpt.vocabulary.iter().skip(4).cloned())?;
    let mut model = Model::backbone(cfg, vocab)?;
    ckpt.apply_backbone(&mut model)?;
    Ok(model)
}

fn need_checkpoint(path: Option<&Path>) -> Result<&Path> {
    path.ok_or_else(|| Error::config("checkpoint", "--checkpoint <backbone> is required"))
}

fn tune_metrics(report: &crate::train::TuneReport) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::from([
        ("overall_accuracy".to_string(), report.metrics.overall_accuracy),
        ("mean_class_accuracy".to_string(), report.metrics.mean_class_accuracy),
        ("learnable".to_string(), report.learnable.total as f64),
        ("train_samples".to_string(), report.train_samples as f64),
    ]);
    if let Some(last) = report.losses.last() {
        m.insert("final_loss".to_string(), *last);
    }
    for (g, n) in &report.learnable.groups {
        m.insert(format!("learnable.{g}"), *n as f64);
    }
    m
}

fn cmd_tune(cli: &Cli, checkpoint: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(cli, Mode::Tune)?;
    let ds = load_dataset(&cfg)?;
    if cli.dry_run {
        let mut model = match checkpoint {
            Some(path) => load_backbone(&cfg, path)?,
            None => Model::backbone(&cfg, Vocabulary::default())?,
        };
        model.attach_tuning(&cfg, &ds.class_names)?;
        say!(out, "config ok ({}), hash {}", cfg.mode.as_str(), cfg.hash());
        return print_learnable(out, &model);
    }
    let mut model = load_backbone(&cfg, need_checkpoint(checkpoint)?)?;
    let id = run_id("tune", &cfg);
    let dir = run_dir(cli, &id)?;
    let mut writer = MetricsWriter::create(dir.join(METRICS_FILE), &id, &cfg)?;
    let report = with_loss_stream(&mut writer, |cb| tune(&cfg, &mut model, &ds, cb))?;
    writer.emit(cfg.steps as u64, tune_metrics(&report))?;
    let path = dir.join(CHECKPOINT_FILE);
    Checkpoint::capture(&model, Some(&report.optimizer), &cfg).save(&path)?;
    say!(
        out,
        "tune {id}: adapter {}, OA {:.4}, mean class {:.4}, {} train samples",
        cfg.adapter.as_str(),
        report.metrics.overall_accuracy,
        report.metrics.mean_class_accuracy,
        report.train_samples
    );
    print_learnable(out, &model)?;
    say!(out, "checkpoint {}", path.display());
    Ok(())
}

fn load_tuned(path: &Path) -> Result<(Checkpoint, Model)> {
    let ckpt = Checkpoint::load(path)?;
    let model = ckpt.build_model()?;
    if model.prompt.is_none() {
        return Err(Error::Checkpoint(format!("{} holds no prompt contexts", path.display())));
    }
    Ok((ckpt, model))
}

fn cmd_eval(cli: &Cli, checkpoint: &Path, out: &mut dyn Write) -> Result<()> {
    let (ckpt, model) = load_tuned(checkpoint)?;
    let mut cfg = ckpt.config.clone();
    apply_overrides(cli, &mut cfg);
    let ds = load_dataset(&cfg)?;
    let names = model.class_names().unwrap_or_default();
    if names != ds.class_names.as_slice() {
        return Err(Error::config(
            "classes",
            format!("checkpoint classes {:?} differ from data classes {:?}", names, ds.class_names),
        ));
    }
    if cli.dry_run {
        say!(out, "checkpoint and data agree on {} classes", names.len());
        return Ok(());
    }
    let test = FeatureSplit::build(&model, &ds, Split::Test)?;
    let text = model.prompt_text_features()?;
    let m = evaluate(&model, &test.features, &test.labels, &text)?;
    let id = run_id("eval", &cfg);
    let dir = run_dir(cli, &id)?;
    let mut writer = MetricsWriter::create(dir.join(METRICS_FILE), &id, &cfg)?;
    let mut record = BTreeMap::from([
        ("overall_accuracy".to_string(), m.overall_accuracy),
        ("mean_class_accuracy".to_string(), m.mean_class_accuracy),
        ("test_samples".to_string(), m.total as f64),
    ]);
    for (name, acc) in names.iter().zip(&m.per_class_accuracy) {
        if let Some(a) = acc {
            record.insert(format!("class.{name}"), *a);
        }
    }
    writer.emit(ckpt.step, record)?;
    say!(out, "OA {:.4}  mean class accuracy {:.4}  ({} test samples)", m.overall_accuracy, m.mean_class_accuracy, m.total);
    say!(out, "{:<16} {:>8} {:>8}", "class", "samples", "acc");
    for (c, name) in names.iter().enumerate() {
        let n: usize = m.confusion[c].iter().sum();
        let acc = m.per_class_accuracy[c].map_or("-".to_string(), |a| format!("{a:.4}"));
        say!(out, "{name:<16} {n:>8} {acc:>8}");
    }
    Ok(())
}

fn cmd_interpret(checkpoint: &Path, out: &mut dyn Write) -> Result<()> {
    let (_, model) = load_tuned(checkpoint)?;
    let prompt = model.prompt.as_ref().expect("checked by load_tuned");
    let text = &model.backbone.text;
    let rows = nearest_words(
        prompt.context.values(),
        prompt.context.shape()[1],
        &model.backbone.vocab,
        text.token_embedding.values(),
    )?;
    say!(out, "{:>5}  {:<16} {:>10}", "index", "nearest word", "distance");
    for r in rows {
        say!(out, "{:>5}  {:<16} {:>10.4}", r.index, r.word, r.distance);
    }
    Ok(())
}

fn cmd_sweep(
    cli: &Cli,
    checkpoint: Option<&Path>,
    axis: SweepAxis,
    values: Option<Vec<String>>,
    out: &mut dyn Write,
) -> Result<i32> {
    let base = resolve_config(cli, Mode::Tune)?;
    let values = values.unwrap_or_else(|| axis.default_values());
    let cells = values
        .iter()
        .map(|v| (v.clone(), axis.apply(&base, v)))
        .collect::<Vec<_>>();
    if cli.dry_run {
        for (v, cfg) in &cells {
            match cfg {
                Ok(cfg) => say!(out, "{} = {v}: ok, hash {}", axis.as_str(), cfg.hash()),
                Err(e) => say!(out, "{} = {v}: {e}", axis.as_str()),
            }
        }
        return Ok(if cells.iter().any(|(_, c)| c.is_err()) { 2 } else { 0 });
    }
    let ckpt_path = need_checkpoint(checkpoint)?;
    let ds = load_dataset(&base)?;
    let id = format!("sweep-{}-{}", axis.as_str(), &base.hash()[..12]);
    let dir = run_dir(cli, &id)?;
    let mut writer = MetricsWriter::create(dir.join(METRICS_FILE), &id, &base)?;
    let mut rows = Vec::new();
    let mut code = 0;
    for (i, (value, cfg)) in cells.into_iter().enumerate() {
        let result = cfg.and_then(|cfg| {
            let mut model = load_backbone(&cfg, ckpt_path)?;
            tune(&cfg, &mut model, &ds, &mut |_, _| {})
        });
        let row = match result {
            Ok(report) => {
                writer.emit(i as u64, tune_metrics(&report))?;
                SweepRow {
                    axis: axis.as_str().into(),
                    value,
                    overall_accuracy: Some(report.metrics.overall_accuracy),
                    mean_class_accuracy: Some(report.metrics.mean_class_accuracy),
                    learnable: Some(report.learnable.total),
                    train_samples: Some(report.train_samples),
                    status: "ok".into(),
                    error: String::new(),
                }
            }
            Err(e) => {
                code = code.max(exit_code(&e));
                SweepRow {
                    axis: axis.as_str().into(),
                    value,
                    overall_accuracy: None,
                    mean_class_accuracy: None,
                    learnable: None,
                    train_samples: None,
                    status: "failed".into(),
                    error: e.to_string(),
                }
            }
        };
        rows.push(row);
    }
    let path = dir.join(SWEEP_FILE);
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_table(&rows, file)?;
    say!(out, "{:<16} {:>8} {:>10} {:>10} {:>8}", axis.as_str(), "OA", "mean-class", "learnable", "train");
    for r in &rows {
        match (r.overall_accuracy, r.mean_class_accuracy, r.learnable, r.train_samples) {
            (Some(oa), Some(mc), Some(l), Some(n)) => {
                say!(out, "{:<16} {oa:>8.4} {mc:>10.4} {l:>10} {n:>8}", r.value)
            }
            _ => say!(out, "{:<16} failed: {}", r.value, r.error),
        }
    }
    say!(out, "table {}", path.display());
    Ok(code)
}
