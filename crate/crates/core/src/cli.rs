//! Command line front end.
//!
//! | exit | meaning |
//! |------|---------|
//! | 0    | success |
//! | 1    | I/O or external scorer failure |
//! | 2    | usage error (unknown command or flag) |
//! | 3    | validation failure (config, data, checkpoint, arguments) |
//! | 4    | numeric failure (non-finite loss, divergence) |
//!
//! Failures print one line `error[<class>]: <message>` on standard error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_generator, read_manifest, resolve_checkpoint};
use crate::error::{Error, Result};
use crate::imaging::{list_images, load_image, replicate_channels, save_image, ImageBatch};
use crate::metrics::{
    evaluate, ffs_score, label_faves, read_fave_records, train_ffs, EvaluateOptions, ExternalScorer, FfsConfig,
    FfsScorer, PatchClassifier, ReportMeta,
};
use crate::models::enhance;
use crate::training::{train_with, RunOptions, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "photoenhance",
    version,
    about = "Unpaired photo enhancement: train, enhance, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a generator on unpaired source and target collections.
    Train(TrainArgs),
    /// Enhance an image or every image under a directory.
    Enhance(EnhanceArgs),
    /// Write a quality report for a directory of images.
    Evaluate(EvaluateArgs),
    /// Train the fave-rate patch scorer from a record file.
    FfsTrain(FfsTrainArgs),
    /// Score images with a trained fave-rate scorer.
    FfsScore(FfsScoreArgs),
}

#[derive(Args, Debug)]
struct Overrides {
    /// TOML config file; flags win over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set iterations=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Sample batches inline instead of on a prefetch thread.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Continue from a checkpoint path or `latest`.
    #[arg(long, value_name = "CHECKPOINT")]
    resume: Option<String>,
    /// Do not echo log lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct EnhanceArgs {
    /// Checkpoint path, or `latest` for the newest one in --run-dir.
    #[arg(long, default_value = "latest")]
    checkpoint: String,
    #[arg(long, default_value = ".")]
    run_dir: PathBuf,
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Process in tiles of this side length to bound memory.
    #[arg(long)]
    tile: Option<usize>,
    #[arg(long)]
    recursive: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long, value_name = "DIR")]
    enhanced: PathBuf,
    #[arg(long, value_name = "DIR")]
    reference: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    ffs_checkpoint: Option<PathBuf>,
    /// Program printing a score for the image path appended to it.
    #[arg(long, value_name = "CMD")]
    external_scorer: Option<String>,
    /// Generator checkpoint the images came from, recorded in the report.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// Report path; `.csv` selects CSV, anything else a text table.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[arg(long)]
    recursive: bool,
}

#[derive(Args, Debug)]
struct FfsTrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Tab-separated `path views faves` or `path label` lines.
    #[arg(long, value_name = "FILE")]
    records: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FfsScoreArgs {
    #[arg(long, value_name = "PATH")]
    ffs_checkpoint: PathBuf,
    /// An image or a directory of images.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Also write `path<TAB>score` lines here.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long)]
    recursive: bool,
}

/// Parses `args` (program name first) and runs the command; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), one_line(&e.to_string()));
            e.exit_code()
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::FfsTrain(a) => cmd_ffs_train(a),
        Command::FfsScore(a) => cmd_ffs_score(a),
    }
}

fn echo_config(toml: &str, hash: &str) {
    eprintln!("# effective config, hash {hash}");
    for line in toml.lines() {
        eprintln!("#   {line}");
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.overrides.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    for s in &a.overrides.set {
        cfg.set(s)?;
    }
    if a.deterministic {
        cfg.deterministic = true;
    }
    if let Some(d) = a.run_dir {
        cfg.run_dir = d;
    }
    cfg.validate()?;
    echo_config(&cfg.to_toml_string(), &cfg.hash());
    let resume = a.resume.as_deref().map(|r| resolve_checkpoint(r, Some(&cfg.run_dir)));
    let summary = train_with(
        &cfg,
        RunOptions {
            resume,
            quiet: a.quiet,
            ..RunOptions::default()
        },
    )?;
    eprintln!(
        "finished at step {}, checkpoint {}",
        summary.final_step,
        summary.final_checkpoint.display()
    );
    Ok(())
}

fn as_rgb(img: ImageBatch) -> Result<ImageBatch> {
    if img.channels() == 3 {
        Ok(img)
    } else {
        ImageBatch::new(replicate_channels(img.tensor())?)
    }
}

fn cmd_enhance(a: EnhanceArgs) -> Result<()> {
    let ckpt = resolve_checkpoint(&a.checkpoint, Some(&a.run_dir));
    let (g, manifest) = load_generator(&ckpt)?;
    eprintln!(
        "# checkpoint {} at step {}, config hash {}",
        ckpt.display(),
        manifest.step,
        manifest.config_hash
    );
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        list_images(&a.input, a.recursive)?
            .into_iter()
            .map(|p| {
                let rel = p.strip_prefix(&a.input).expect("listed under input").to_path_buf();
                (p, a.out.join(rel))
            })
            .collect()
    } else if a.out.is_dir() {
        let name = a.input.file_name().ok_or_else(|| Error::arg("--in has no file name"))?;
        vec![(a.input.clone(), a.out.join(name))]
    } else {
        vec![(a.input.clone(), a.out.clone())]
    };
    for (src, dst) in jobs {
        if same_file(&src, &dst) {
            return Err(Error::arg(format!("refusing to overwrite input {}", src.display())));
        }
        let img = as_rgb(load_image(&src)?)?;
        let out = enhance(&g, &img, a.tile)?;
        if let Some(dir) = dst.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        save_image(&out, &dst)?;
        println!("{}", dst.display());
    }
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let mut meta = ReportMeta {
        dataset: a.dataset.clone().unwrap_or_default(),
        ..ReportMeta::default()
    };
    if let Some(ck) = &a.checkpoint {
        let m = read_manifest(ck)?;
        meta.checkpoint = Some(format!("{} (step {})", ck.display(), m.step));
        meta.config_hash = Some(m.config_hash);
    }
    eprintln!("# config hash {}", meta.config_hash.as_deref().unwrap_or("-"));
    let scorer = a.ffs_checkpoint.as_deref().map(FfsScorer::load).transpose()?;
    let external = a.external_scorer.as_deref().map(ExternalScorer::parse).transpose()?;
    let report = evaluate(
        &a.enhanced,
        &EvaluateOptions {
            reference: a.reference.as_deref(),
            scorer: scorer.as_ref().map(|s| s as &dyn PatchClassifier),
            external,
            recursive: a.recursive,
            meta,
        },
    )?;
    report.write(&a.out)?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_ffs_train(a: FfsTrainArgs) -> Result<()> {
    let mut cfg = match &a.overrides.config {
        Some(p) => FfsConfig::load(p)?,
        None => FfsConfig::default(),
    };
    for s in &a.overrides.set {
        cfg.set(s)?;
    }
    cfg.validate()?;
    echo_config(&cfg.to_toml_string(), &cfg.hash());
    let data = label_faves(&read_fave_records(&a.records)?)?;
    let (scorer, report) = train_ffs(&data, &cfg)?;
    for e in &report.history {
        println!("{}", serde_json::to_string(e).expect("epoch serializes"));
    }
    scorer.save(&a.out)?;
    eprintln!(
        "kept epoch {} (validation accuracy {:.4}), wrote {}",
        report.best_epoch,
        report.best_accuracy,
        a.out.display()
    );
    Ok(())
}

fn cmd_ffs_score(a: FfsScoreArgs) -> Result<()> {
    let scorer = FfsScorer::load(&a.ffs_checkpoint)?;
    let files = if a.input.is_dir() {
        list_images(&a.input, a.recursive)?
    } else {
        vec![a.input.clone()]
    };
    let mut lines = String::new();
    for f in files {
        let s = ffs_score(&scorer, &load_image(&f)?)?;
        let line = format!("{}\t{s:.6}", f.display());
        println!("{line}");
        lines.push_str(&line);
        lines.push('\n');
    }
    if let Some(out) = &a.out {
        fs::write(out, lines).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}
