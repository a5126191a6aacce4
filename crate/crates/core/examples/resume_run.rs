//! Interrupts a run, resumes it from the last checkpoint and checks that the
//! log matches an uninterrupted run.

use photoenhance::toy::{desk_config, write_slim_feature_weights, write_toy_domains};
use photoenhance::training::{read_log, train_with, RunOptions, LOG_FILE};

fn main() -> photoenhance::Result<()> {
    let tmp = tempfile::tempdir().map_err(|e| photoenhance::Error::Dataset(e.to_string()))?;
    let (src, tgt) = write_toy_domains(tmp.path(), 12, 40, 3)?;
    let weights = tmp.path().join("vgg.safetensors");
    write_slim_feature_weights(&weights, 1)?;
    let config = |dir: &str| {
        let mut c = desk_config(&src, &tgt, &weights, &tmp.path().join(dir));
        c.iterations = 8;
        c.checkpoint_every = 4;
        c.patch_size = 24;
        c.batch_size = 2;
        c.generator_width = 8;
        c.deterministic = true;
        c
    };
    let quiet = || RunOptions {
        quiet: true,
        ..Default::default()
    };

    let straight = config("straight");
    train_with(&straight, quiet())?;

    let split = config("split");
    let first = train_with(
        &split,
        RunOptions {
            stop_after: Some(6),
            ..quiet()
        },
    )?;
    println!(
        "stopped after step {}, last checkpoint {}",
        first.final_step,
        first.final_checkpoint.display()
    );
    train_with(
        &split,
        RunOptions {
            resume: Some(first.final_checkpoint),
            ..quiet()
        },
    )?;

    let a = read_log(&straight.run_dir.join(LOG_FILE))?;
    let b = read_log(&split.run_dir.join(LOG_FILE))?;
    println!("{} records each, identical: {}", a.len(), a == b);
    Ok(())
}
