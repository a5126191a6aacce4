mod common;

use common::Toy;
use photoenhance::checkpoint::{load_train_state, read_manifest, step_file_name};
use photoenhance::imaging::UnpairedDataset;
use photoenhance::nn::Module;
use photoenhance::tensor::Tensor;
use photoenhance::training::{read_log, train_with, RunOptions, TrainConfig, TrainState, LOG_FILE};
use photoenhance::Error;

fn snapshot<M: Module<f32>>(m: &M) -> Vec<Tensor<f32>> {
    m.params().into_iter().map(|(_, t)| t.clone()).collect()
}

fn same(a: &[Tensor<f32>], b: &[Tensor<f32>]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bitwise_eq(y))
}

fn batches(cfg: &TrainConfig) -> UnpairedDataset {
    UnpairedDataset::open(&cfg.source_dir, &cfg.target_dir, cfg.patch_size, cfg.seed, false).unwrap()
}

fn quiet() -> RunOptions {
    RunOptions {
        quiet: true,
        ..RunOptions::default()
    }
}

#[test]
fn critic_update_leaves_generators_untouched() {
    let toy = Toy::new(6, 32, 1);
    let cfg = toy.tiny_config("run");
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let (x, y) = batches(&cfg).sample_patch_batch(2).unwrap();
    let g = snapshot(&state.bundle.generator);
    let f = snapshot(&state.bundle.inverse);
    let dc = snapshot(&state.bundle.color_critic);
    let dt = snapshot(&state.bundle.texture_critic);
    let enhanced = state.bundle.generator.forward(x.tensor()).unwrap();
    state.critic_update(&enhanced, y.tensor()).unwrap();
    assert!(same(&g, &snapshot(&state.bundle.generator)));
    assert!(same(&f, &snapshot(&state.bundle.inverse)));
    assert!(!same(&dc, &snapshot(&state.bundle.color_critic)));
    assert!(!same(&dt, &snapshot(&state.bundle.texture_critic)));
}

#[test]
fn generator_update_leaves_critics_untouched() {
    let toy = Toy::new(6, 32, 2);
    let cfg = toy.tiny_config("run");
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let (x, _) = batches(&cfg).sample_patch_batch(2).unwrap();
    let g = snapshot(&state.bundle.generator);
    let f = snapshot(&state.bundle.inverse);
    let dc = snapshot(&state.bundle.color_critic);
    let dt = snapshot(&state.bundle.texture_critic);
    let trace = state.bundle.generator.forward_trace(x.tensor()).unwrap();
    state.generator_update(x.tensor(), &trace, 1.0, 1.0).unwrap();
    assert!(same(&dc, &snapshot(&state.bundle.color_critic)));
    assert!(same(&dt, &snapshot(&state.bundle.texture_critic)));
    assert!(!same(&g, &snapshot(&state.bundle.generator)));
    assert!(!same(&f, &snapshot(&state.bundle.inverse)));
}

#[test]
fn feature_weights_stay_fixed_over_ten_steps() {
    let toy = Toy::new(6, 32, 3);
    let cfg = toy.tiny_config("run");
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let before = snapshot(state.bundle.features().stack());
    let mut ds = batches(&cfg);
    for _ in 0..10 {
        let (x, y) = ds.sample_patch_batch(2).unwrap();
        state.train_step(x.tensor(), y.tensor()).unwrap();
    }
    assert_eq!(state.step, 10);
    assert!(same(&before, &snapshot(state.bundle.features().stack())));
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let toy = Toy::new(6, 32, 4);
    let mut cfg = toy.tiny_config("run");
    cfg.learning_rate = 0.0;
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let all = |s: &TrainState<f32>| {
        let b = &s.bundle;
        [
            snapshot(&b.generator),
            snapshot(&b.inverse),
            snapshot(&b.color_critic),
            snapshot(&b.texture_critic),
        ]
        .concat()
    };
    let before = all(&state);
    let (x, y) = batches(&cfg).sample_patch_batch(2).unwrap();
    state.train_step(x.tensor(), y.tensor()).unwrap();
    assert!(same(&before, &all(&state)));
}

#[test]
fn non_finite_input_reports_divergence() {
    let toy = Toy::new(6, 32, 5);
    let cfg = toy.tiny_config("run");
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let (x, y) = batches(&cfg).sample_patch_batch(2).unwrap();
    let mut bad = x.tensor().clone();
    bad.data_mut()[0] = f32::NAN;
    let err = state.train_step(&bad, y.tensor()).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 1, .. }), "{err:?}");
    assert_eq!(err.exit_code(), 4);
    assert!(state.train_step(x.tensor(), &x.tensor().slice_batch(0, 1)).is_err());
}

#[test]
fn deterministic_runs_match_and_resume_is_seamless() {
    let toy = Toy::new(6, 32, 6);
    let a = toy.tiny_config("a");
    let ra = train_with(&a, quiet()).unwrap();
    let rb = train_with(&a, quiet()).unwrap();
    assert_eq!(ra.history.len(), 4);
    assert_eq!(ra.history, rb.history);
    assert_eq!(read_log(&a.run_dir.join(LOG_FILE)).unwrap(), ra.history);
    let elsewhere = toy.tiny_config("b");
    assert_ne!(elsewhere.hash(), a.hash());
    assert_eq!(train_with(&elsewhere, quiet()).unwrap().history, ra.history);

    // interrupted after step 3, resumed from the step-2 checkpoint
    let c = toy.tiny_config("c");
    let part = train_with(
        &c,
        RunOptions {
            stop_after: Some(3),
            ..quiet()
        },
    )
    .unwrap();
    assert_eq!(part.final_step, 3);
    let ckpt = c.run_dir.join(step_file_name(2));
    assert_eq!(read_manifest(&ckpt).unwrap().step, 2);
    let rest = train_with(
        &c,
        RunOptions {
            resume: Some(ckpt),
            ..quiet()
        },
    )
    .unwrap();
    assert_eq!(rest.history, ra.history[2..]);
    assert_eq!(read_log(&c.run_dir.join(LOG_FILE)).unwrap(), ra.history);
}

#[test]
fn checkpoint_round_trip_restores_state() {
    let toy = Toy::new(6, 32, 7);
    let cfg = toy.tiny_config("run");
    let summary = train_with(&cfg, quiet()).unwrap();
    let (state, stored) = load_train_state::<f32>(&summary.final_checkpoint, None).unwrap();
    assert_eq!(state.step, 4);
    assert_eq!(stored, cfg);
    let again = load_train_state::<f32>(&summary.final_checkpoint, None).unwrap().0;
    assert_eq!(state.bundle, again.bundle);
}

#[test]
fn resume_with_a_different_trajectory_is_refused() {
    let toy = Toy::new(6, 32, 8);
    let cfg = toy.tiny_config("run");
    let summary = train_with(&cfg, quiet()).unwrap();
    let mut other = cfg.clone();
    other.learning_rate = 1e-3;
    other.iterations = 6;
    let err = train_with(
        &other,
        RunOptions {
            resume: Some(summary.final_checkpoint),
            ..quiet()
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err:?}");
}

#[test]
fn zero_iterations_writes_an_initial_checkpoint() {
    let toy = Toy::new(6, 32, 9);
    let mut cfg = toy.tiny_config("run");
    cfg.iterations = 0;
    let summary = train_with(&cfg, quiet()).unwrap();
    assert_eq!(summary.final_step, 0);
    assert!(summary.history.is_empty());
    assert_eq!(read_manifest(&summary.final_checkpoint).unwrap().step, 0);
}

#[test]
fn prefetching_gives_the_same_trajectory() {
    let toy = Toy::new(6, 32, 10);
    let a = toy.tiny_config("a");
    let mut b = toy.tiny_config("b");
    b.deterministic = false;
    assert_eq!(
        train_with(&a, quiet()).unwrap().history,
        train_with(&b, quiet()).unwrap().history
    );
}
