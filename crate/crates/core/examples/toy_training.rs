//! Trains a small generator on synthetic unpaired data and prints the log.
//!
//! `cargo run --release --example toy_training -- [iterations]`

use photoenhance::toy::{desk_config, write_slim_feature_weights, write_toy_domains};
use photoenhance::training::{train_with, RunOptions};

fn main() -> photoenhance::Result<()> {
    let iterations: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let tmp = tempfile::tempdir().map_err(|e| photoenhance::Error::Dataset(e.to_string()))?;
    let (src, tgt) = write_toy_domains(tmp.path(), 40, 72, 7)?;
    let weights = tmp.path().join("vgg.safetensors");
    write_slim_feature_weights(&weights, 3)?;
    let mut cfg = desk_config(&src, &tgt, &weights, &tmp.path().join("run"));
    cfg.iterations = iterations;
    cfg.patch_size = 32;
    cfg.checkpoint_every = iterations.max(1);
    println!("config hash {}", cfg.short_hash());
    let summary = train_with(
        &cfg,
        RunOptions {
            quiet: true,
            ..Default::default()
        },
    )?;
    for r in &summary.history {
        println!("{:>4}  {}", r.step, r.losses);
    }
    println!("final checkpoint {}", summary.final_checkpoint.display());
    Ok(())
}
