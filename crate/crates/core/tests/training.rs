//! Training pipeline: batch loss estimator, toy identification and
//! determinism.

use phdae::ident::{
    batch_gradient, evaluate_nrms, full_subsection_loss, train, valid_starts, IdentModel,
    LinearEncoder, TrainConfig,
};
use phdae::model::{MaskedMatrix, OutputMap, PhDaeParams, StructuralMask};
use phdae::numerics::Matrix;
use phdae::signals::Dataset;
use phdae::solver::simulate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 0.05;

/// `E ẋ = −R x + u`, `y = x` with factors `(√E, √R)` free.
fn scalar_params(e_factor: f64, r_factor: f64) -> PhDaeParams<f64> {
    PhDaeParams::new(
        MaskedMatrix::frozen(Matrix::zeros(1, 1)),
        MaskedMatrix::new(Matrix::from_rows(&[[r_factor]]), StructuralMask::all_free(1, 1)).unwrap(),
        MaskedMatrix::new(Matrix::from_rows(&[[e_factor]]), StructuralMask::all_free(1, 1)).unwrap(),
        MaskedMatrix::frozen(Matrix::from_rows(&[[1.0]])),
    )
    .unwrap()
}

fn scalar_data(seed: u64, len: usize) -> Dataset {
    let truth = scalar_params(0.5f64.sqrt(), 1.0).assemble();
    // White input keeps the encoder window well conditioned.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = (0..len).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
    let traj = simulate(&truth, &[0.3], &inputs, &phdae::solver::SolverConfig::new(H)).unwrap();
    let outputs = traj.states.iter().map(|x| vec![x[0]]).collect();
    Dataset::new(H, inputs, outputs).unwrap()
}

fn scalar_model(n_lag: usize) -> IdentModel {
    let mut encoder = LinearEncoder::zeros(1, n_lag, 1, 1);
    encoder.weight[(0, 0)] = 0.1;
    IdentModel {
        params: scalar_params(1.0, 0.5),
        encoder,
        output_map: OutputMap::port_only(),
    }
}

fn toy_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        truncation_length: 10,
        n_lag: Some(1),
        batch_size: 32,
        epochs,
        workers: 1,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn mean_batch_loss_over_all_starts_equals_full_loss() {
    let data = scalar_data(1, 40);
    let mut model = scalar_model(2);
    model.encoder.weight = Matrix::from_rows(&[[0.2, -0.1, 0.3, 0.5, 0.7]]);
    model.encoder.bias = vec![0.05];
    let config = toy_config(1).solver(H);
    for horizon in [1, 5, 13] {
        let starts: Vec<usize> = (2..2 + valid_starts(40, horizon, 2)).collect();
        assert_eq!(*starts.last().unwrap(), 40 - horizon);
        let (batch, _) = batch_gradient(&model, &data, &starts, horizon, &config, None).unwrap();
        let full = full_subsection_loss(&model, &data, horizon, 2, &config).unwrap();
        assert!((batch - full).abs() <= 1e-12 * full, "T={horizon}: {batch} vs {full}");
    }
}

#[test]
fn noiseless_scalar_system_is_identified() {
    let train_set = scalar_data(1, 400);
    let val_set = scalar_data(2, 400);
    let init = scalar_model(1);
    let state = train(&train_set, &val_set, &init, &toy_config(200)).unwrap();
    let best = state.best_model();
    let nrms = evaluate_nrms(&best, &train_set, &toy_config(1).solver(H)).unwrap();
    assert!(nrms < 1e-3, "train NRMS {nrms}");
    let first = state.log.first().unwrap().train_loss;
    let last = state.log.last().unwrap().train_loss;
    assert!(last < 0.01 * first, "loss {first} -> {last}");
    let model = best.params.assemble();
    assert!((model.e[(0, 0)] - 0.5).abs() < 5e-3, "{:?}", model.e);
    assert!((model.r[(0, 0)] - 1.0).abs() < 5e-3, "{:?}", model.r);
}

#[test]
fn zero_epochs_return_the_initial_model() {
    let data = scalar_data(1, 100);
    let init = scalar_model(1);
    let state = train(&data, &data, &init, &toy_config(0)).unwrap();
    assert_eq!(state.best_model(), init);
    assert!(state.log.is_empty());
}

#[test]
fn best_snapshot_is_never_worse_than_any_epoch() {
    let train_set = scalar_data(1, 200);
    let val_set = scalar_data(2, 200);
    let state = train(&train_set, &val_set, &scalar_model(1), &toy_config(30)).unwrap();
    for rec in &state.log {
        assert!(state.best.val_nrms <= rec.val_nrms);
    }
    let again = evaluate_nrms(&state.best_model(), &val_set, &toy_config(1).solver(H)).unwrap();
    assert_eq!(again, state.best.val_nrms);
}

#[test]
fn training_is_identical_across_worker_counts() {
    let train_set = scalar_data(1, 300);
    let val_set = scalar_data(2, 300);
    let init = scalar_model(3);
    let run = |workers: usize| {
        let cfg = TrainConfig {
            workers,
            ..toy_config(5)
        };
        train(&train_set, &val_set, &init, &cfg).unwrap()
    };
    let a = run(1);
    let b = run(1);
    let c = run(3);
    assert_eq!(a.best_model(), b.best_model());
    assert_eq!(a.log_csv(), b.log_csv());
    assert_eq!(a.best_model(), c.best_model());
    assert_eq!(a.current, c.current);
    assert_eq!(a.log_csv(), c.log_csv());
}
