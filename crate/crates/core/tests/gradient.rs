//! Adjoint gradients against finite differences of the forward loss.

use phdae::grad::{central_difference, subsection_gradient, Subsection, SubsectionEvaluator};
use phdae::ident::LinearEncoder;
use phdae::model::{MaskedMatrix, OutputMap, PhDaeParams, StructuralMask};
use phdae::numerics::Matrix;
use phdae::solver::SolverConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random instance whose last state is algebraic: the last row and column
/// of `L_E` are frozen at zero.
fn random_instance(n: usize, rng: &mut ChaCha8Rng) -> (PhDaeParams<f64>, LinearEncoder<f64>) {
    let g = Matrix::from_vec(n, 1, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let le_mask = StructuralMask::from_fn(n, n, |i, j| j <= i && i < n - 1);
    let mut params = PhDaeParams::new(
        MaskedMatrix::new(Matrix::zeros(n, n), StructuralMask::strictly_lower(n)).unwrap(),
        MaskedMatrix::new(Matrix::zeros(n, n), StructuralMask::lower_triangular(n)).unwrap(),
        MaskedMatrix::new(Matrix::zeros(n, n), le_mask).unwrap(),
        MaskedMatrix::new(g, StructuralMask::all_free(n, 1)).unwrap(),
    )
    .unwrap();
    params.randomize(rng);
    let mut encoder = LinearEncoder::random(n, 2, 1, 1, 1.0, rng);
    for b in &mut encoder.bias {
        *b = rng.random_range(-0.5..0.5);
    }
    (params, encoder)
}

fn random_signal(len: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..len).map(|_| vec![rng.random_range(-1.0..1.0)]).collect()
}

/// Richardson-extrapolated central differences.
fn fd(f: impl Fn(&[f64]) -> phdae::Result<f64>, x: &[f64]) -> Vec<f64> {
    let d1 = central_difference(&f, x, 1e-4).unwrap();
    let d2 = central_difference(&f, x, 5e-5).unwrap();
    d1.iter().zip(&d2).map(|(a, b)| (4.0 * b - a) / 3.0).collect()
}

fn compare(adjoint: &[f64], numeric: &[f64], what: &str) -> f64 {
    let mut worst = 0.0f64;
    for (i, (a, f)) in adjoint.iter().zip(numeric).enumerate() {
        if a.abs().max(f.abs()) <= 1e-8 {
            continue;
        }
        let rel = (a - f).abs() / a.abs().max(f.abs());
        assert!(rel < 1e-5, "{what}[{i}]: adjoint {a:e} vs fd {f:e} (rel {rel:e})");
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn adjoint_matches_finite_differences_on_random_daes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let outputs = OutputMap::port_only();
    let mut worst = 0.0f64;
    for case in 0..25 {
        let n = 2 + case % 5;
        let horizon = 1 + case % 10;
        let (params, encoder) = random_instance(n, &mut rng);
        let h = [0.05, 0.1, 0.2][case % 3];
        let config = SolverConfig::new(h);
        let len = encoder.n_lag + horizon;
        let inputs = random_signal(len, &mut rng);
        let targets = random_signal(len, &mut rng);
        let sub = Subsection::at(&inputs, &targets, encoder.n_lag, encoder.n_lag, horizon).unwrap();
        assert_eq!(params.assemble().algebraic_rows(), vec![n - 1]);

        let (loss, grad) = subsection_gradient(&params, &encoder, &outputs, &sub, &config).unwrap();
        assert!(loss > 0.0);
        let d_theta = fd(
            |th| {
                let p = params.unflatten(th)?;
                SubsectionEvaluator::new(&p, &encoder, &outputs, &config)?.loss(&sub)
            },
            &params.flatten(),
        );
        let d_eta = fd(
            |eta| {
                let e = encoder.with_params(eta)?;
                SubsectionEvaluator::new(&params, &e, &outputs, &config)?.loss(&sub)
            },
            &encoder.flatten(),
        );
        worst = worst.max(compare(&grad.d_theta, &d_theta, "theta"));
        worst = worst.max(compare(&grad.d_eta, &d_eta, "eta"));
    }
    println!("worst relative error {worst:e}");
}

#[test]
fn adjoint_matches_finite_differences_with_state_selector() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (params, _) = random_instance(4, &mut rng);
    let outputs = OutputMap::picking(4, &[1, 2]);
    let eta: Vec<f64> = (0..LinearEncoder::<f64>::zeros(4, 2, 1, 3).n_params())
        .map(|_| rng.random_range(-0.5..0.5))
        .collect();
    let encoder = LinearEncoder::zeros(4, 2, 1, 3).with_params(&eta).unwrap();
    let config = SolverConfig::new(0.1);
    let inputs = random_signal(10, &mut rng);
    let targets: Vec<Vec<f64>> = (0..10)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let sub = Subsection::at(&inputs, &targets, 2, 2, 8).unwrap();
    let (_, grad) = subsection_gradient(&params, &encoder, &outputs, &sub, &config).unwrap();
    let d_theta = fd(
        |th| {
            let p = params.unflatten(th)?;
            SubsectionEvaluator::new(&p, &encoder, &outputs, &config)?.loss(&sub)
        },
        &params.flatten(),
    );
    let d_eta = fd(
        |eta| {
            let e = encoder.with_params(eta)?;
            SubsectionEvaluator::new(&params, &e, &outputs, &config)?.loss(&sub)
        },
        &encoder.flatten(),
    );
    compare(&grad.d_theta, &d_theta, "theta");
    compare(&grad.d_eta, &d_eta, "eta");
}

#[test]
fn adjoint_matches_finite_differences_on_dc_network() {
    use phdae::bench::{build_dc_network, DcNetParams};
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (_, mut params) = build_dc_network(&DcNetParams::nominal()).unwrap();
    let theta: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..1.5)).collect();
    params.set_theta(&theta).unwrap();
    let outputs = OutputMap::picking(5, &[1, 2]);
    let eta: Vec<f64> = (0..LinearEncoder::<f64>::zeros(5, 5, 1, 3).n_params())
        .map(|_| rng.random_range(-0.3..0.3))
        .collect();
    let encoder = LinearEncoder::zeros(5, 5, 1, 3).with_params(&eta).unwrap();
    let config = SolverConfig::new(0.005);
    let inputs: Vec<Vec<f64>> = (0..15).map(|k| vec![(0.3 * k as f64).sin()]).collect();
    let targets: Vec<Vec<f64>> = (0..15)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let sub = Subsection::at(&inputs, &targets, 5, 5, 10).unwrap();
    let (_, grad) = subsection_gradient(&params, &encoder, &outputs, &sub, &config).unwrap();
    let d_theta = fd(
        |th| {
            let p = params.unflatten(th)?;
            SubsectionEvaluator::new(&p, &encoder, &outputs, &config)?.loss(&sub)
        },
        &params.flatten(),
    );
    compare(&grad.d_theta, &d_theta, "theta");
}
