use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_train_state, save_run_checkpoint};
use crate::error::{Error, Result};
use crate::imaging::{ImageBatch, SamplerState, UnpairedDataset};
use crate::losses::LossBreakdown;
use crate::models::FeatureExtractor;

use super::{TrainConfig, TrainState};

pub const LOG_FILE: &str = "train.log";
pub const CONFIG_FILE: &str = "config.toml";

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

impl LogRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("finite record serializes")
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from this checkpoint instead of initializing.
    pub resume: Option<PathBuf>,
    /// Use this extractor instead of loading `feature_weights`.
    pub features: Option<FeatureExtractor<f32>>,
    /// Suppress the per-step line on standard output.
    pub quiet: bool,
    /// Stop after this global step as if interrupted (no final checkpoint).
    pub stop_after: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    pub final_step: u64,
    /// Records produced by this invocation.
    pub history: Vec<LogRecord>,
}

/// Trains with default options; returns the last checkpoint written.
pub fn train(cfg: &TrainConfig) -> Result<PathBuf> {
    Ok(train_with(cfg, RunOptions::default())?.final_checkpoint)
}

type Batch = (ImageBatch, ImageBatch, SamplerState);

enum Batches {
    Inline(UnpairedDataset, usize),
    Prefetch(Receiver<Result<Batch>>, Option<JoinHandle<()>>),
}

impl Batches {
    fn new(mut ds: UnpairedDataset, batch: usize, remaining: u64, cfg: &TrainConfig) -> Self {
        if cfg.deterministic || remaining == 0 {
            return Batches::Inline(ds, batch);
        }
        let (tx, rx) = sync_channel(cfg.prefetch_depth.max(1));
        let handle = std::thread::spawn(move || {
            for _ in 0..remaining {
                let item = ds.sample_patch_batch(batch).map(|(x, y)| (x, y, ds.state()));
                let failed = item.is_err();
                if tx.send(item).is_err() || failed {
                    return;
                }
            }
        });
        Batches::Prefetch(rx, Some(handle))
    }

    fn next(&mut self) -> Result<Batch> {
        match self {
            Batches::Inline(ds, n) => {
                let (x, y) = ds.sample_patch_batch(*n)?;
                Ok((x, y, ds.state()))
            }
            Batches::Prefetch(rx, _) => rx
                .recv()
                .map_err(|_| Error::Dataset("prefetch thread stopped unexpectedly".into()))?,
        }
    }
}

impl Drop for Batches {
    fn drop(&mut self) {
        if let Batches::Prefetch(rx, handle) = self {
            // unblock a producer waiting on a full queue, then reap it
            while rx.try_recv().is_ok() {}
            let rx = std::mem::replace(rx, sync_channel(1).1);
            drop(rx);
            if let Some(h) = handle.take() {
                let _ = h.join();
            }
        }
    }
}

/// Fields that do not influence the optimization trajectory.
fn trajectory_hash(cfg: &TrainConfig) -> String {
    let mut c = cfg.clone();
    c.iterations = 0;
    c.checkpoint_every = 1;
    c.deterministic = false;
    c.prefetch_depth = 0;
    c.run_dir = PathBuf::new();
    c.hash()
}

/// Keeps log records up to `step`, dropping any written after that
/// checkpoint by an interrupted run.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    let Ok(file) = File::open(path) else {
        return Ok(());
    };
    let mut kept = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        match serde_json::from_str::<LogRecord>(&line) {
            Ok(r) if r.step <= step => {
                kept.push_str(&line);
                kept.push('\n');
            }
            _ => {}
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

pub fn train_with(cfg: &TrainConfig, opts: RunOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    let dataset = UnpairedDataset::open(
        &cfg.source_dir,
        &cfg.target_dir,
        cfg.patch_size,
        cfg.seed,
        cfg.recursive,
    )?;
    let run_dir = &cfg.run_dir;
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;

    let resuming = opts.resume.is_some();
    let mut state = match &opts.resume {
        Some(path) => {
            let (state, stored) = load_train_state(path, opts.features.clone())?;
            if trajectory_hash(&stored) != trajectory_hash(cfg) {
                return Err(Error::Config(format!(
                    "{} was written with a different configuration (hash {}, now {})",
                    path.display(),
                    &stored.hash()[..16],
                    cfg.short_hash()
                )));
            }
            state
        }
        None => match opts.features.clone() {
            Some(f) => TrainState::with_features(cfg, f)?,
            None => TrainState::init(cfg)?,
        },
    };
    let mut dataset = dataset;
    if let Some(s) = state.sampler {
        dataset.restore(s);
    }
    cfg.save(&run_dir.join(CONFIG_FILE))?;

    let log_path = run_dir.join(LOG_FILE);
    if resuming {
        truncate_log(&log_path, state.step)?;
    }
    let mut log = OpenOptions::new()
        .create(true)
        .append(resuming)
        .write(true)
        .truncate(!resuming)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let mut last = if resuming {
        opts.resume.clone().expect("resuming")
    } else {
        save_run_checkpoint(&state, cfg, run_dir)?
    };
    let remaining = cfg.iterations.saturating_sub(state.step);
    let mut batches = Batches::new(dataset, cfg.batch_size, remaining, cfg);
    let mut history = Vec::new();
    let stdout = std::io::stdout();
    while state.step < cfg.iterations {
        let (x, y, sampler) = batches.next()?;
        let losses = state.train_step(&x, &y)?;
        state.sampler = Some(sampler);
        let record = LogRecord {
            step: state.step,
            losses,
        };
        let line = record.to_json();
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        if !opts.quiet {
            let _ = writeln!(stdout.lock(), "{line}");
        }
        history.push(record);
        if opts.stop_after == Some(state.step) {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            return Ok(TrainSummary {
                final_checkpoint: last,
                final_step: state.step,
                history,
            });
        }
        if state.step % cfg.checkpoint_every == 0 || state.step == cfg.iterations {
            last = save_run_checkpoint(&state, cfg, run_dir)?;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    Ok(TrainSummary {
        final_checkpoint: last,
        final_step: state.step,
        history,
    })
}

/// Parses a log written by [`train_with`].
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::Record {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}
