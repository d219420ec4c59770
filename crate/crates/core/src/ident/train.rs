use std::fmt::Write as _;

use log::{debug, info, warn};

use crate::error::{Error, Result};
use crate::ident::adam::{adam_step, AdamState};
use crate::ident::batch::{sample_batch, valid_starts};
use crate::ident::loss::batch_gradient;
use crate::ident::{IdentModel, TrainConfig};
use crate::rng::{stream, Stream};
use crate::signals::Dataset;
use crate::solver::{SolverConfig, StepSolver};

/// Free-run simulation over a whole record.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Sample index of the encoder-estimated initial state.
    pub start: usize,
    /// Predicted channels for samples `start..N`.
    pub outputs: Vec<Vec<f64>>,
}

/// Simulates the full record from a single encoder estimate at `τ = n_lag`.
pub fn predict(model: &IdentModel, data: &Dataset, config: &SolverConfig<f64>) -> Result<Prediction> {
    let n_lag = model.encoder.n_lag;
    if data.len() <= n_lag {
        return Err(Error::InsufficientData(format!(
            "{} samples with an encoder lag of {n_lag}",
            data.len()
        )));
    }
    let system = model.params.assemble();
    let solver = StepSolver::new(&system, *config)?;
    let x0 = model
        .encoder
        .encode(&data.inputs[..n_lag], &data.outputs[..=n_lag])?;
    let traj = solver.simulate(&x0, &data.inputs[n_lag..])?;
    let outputs = traj
        .states
        .iter()
        .map(|x| model.output_map.observe(&system, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prediction {
        start: n_lag,
        outputs,
    })
}

/// RMS error over the population std of the measurement, per channel,
/// combined as the root mean of the squared per-channel values.
pub fn nrms(measured: &[Vec<f64>], predicted: &[Vec<f64>]) -> Result<f64> {
    if measured.len() != predicted.len() || measured.is_empty() {
        return Err(Error::dims(format!(
            "{} measured vs {} predicted samples",
            measured.len(),
            predicted.len()
        )));
    }
    let channels = measured[0].len();
    let n = measured.len() as f64;
    let mut acc = 0.0;
    for c in 0..channels {
        let mean = measured.iter().map(|y| y[c]).sum::<f64>() / n;
        let var = measured.iter().map(|y| (y[c] - mean).powi(2)).sum::<f64>() / n;
        if !(var > 0.0) {
            return Err(Error::DegenerateSignal(format!("channel {c} is constant")));
        }
        let mse = measured
            .iter()
            .zip(predicted)
            .map(|(y, p)| (y[c] - p[c]).powi(2))
            .sum::<f64>()
            / n;
        acc += mse / var;
    }
    Ok((acc / channels as f64).sqrt())
}

pub fn evaluate_nrms(model: &IdentModel, data: &Dataset, config: &SolverConfig<f64>) -> Result<f64> {
    let pred = predict(model, data, config)?;
    nrms(&data.outputs[pred.start..], &pred.outputs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    pub val_nrms: f64,
    pub lr: f64,
}

/// Parameters with the best validation NRMS seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub epoch: usize,
    pub val_nrms: f64,
    pub parameters: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Parameters after the last update.
    pub current: IdentModel,
    pub adam: AdamState,
    pub best: Snapshot,
    pub log: Vec<EpochRecord>,
}

impl TrainState {
    pub fn best_model(&self) -> IdentModel {
        self.current
            .with_parameters(&self.best.parameters)
            .expect("snapshot matches model layout")
    }

    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_nrms,lr\n");
        for r in &self.log {
            writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_nrms, r.lr).unwrap();
        }
        s
    }
}

fn build_pool(workers: usize) -> Result<Option<rayon::ThreadPool>> {
    if workers == 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Candidate parameters are only accepted if the assembled step is solvable.
fn admissible(model: &IdentModel, config: &SolverConfig<f64>) -> bool {
    model.parameters().iter().all(|v| v.is_finite())
        && StepSolver::new(&model.params.assemble(), *config).is_ok()
}

/// Minimizes the mini-batch truncated simulation loss with Adam, keeping
/// the parameters with the best validation NRMS.
pub fn train(
    train_data: &Dataset,
    val_data: &Dataset,
    init: &IdentModel,
    config: &TrainConfig,
) -> Result<TrainState> {
    config.validate()?;
    init.check()?;
    train_data.validate()?;
    val_data.validate()?;
    if (train_data.t_s - val_data.t_s).abs() > 1e-12 * train_data.t_s {
        return Err(Error::InvalidConfig("train and validation sampling periods differ".into()));
    }
    let solver = config.solver(train_data.t_s);
    let horizon = config.truncation_length;
    let n_lag = init.encoder.n_lag;
    let n_valid = valid_starts(train_data.len(), horizon, n_lag);
    let batch_size = config.batch_size.min(n_valid.max(1));
    let batches = config
        .batches_per_epoch
        .unwrap_or_else(|| (n_valid / batch_size.max(1)).max(1));
    let pool = build_pool(config.workers)?;
    let mut rng = stream(config.seed, Stream::Batches);

    if !admissible(init, &solver) {
        return Err(Error::SingularJacobian("initial parameters".into()));
    }
    let mut current = init.clone();
    let mut params = current.parameters();
    let log_positions: Vec<usize> = if config.log_diagonals {
        current
            .params
            .factor_diagonal_positions()
            .into_iter()
            .filter(|&i| params[i] > 0.0)
            .collect()
    } else {
        Vec::new()
    };
    // Adam runs on `z`, which equals `params` except at `log_positions`
    // where it holds the logarithm.
    let mut z = params.clone();
    for &i in &log_positions {
        z[i] = params[i].ln();
    }
    let mut adam = AdamState::new(params.len());
    let init_val = evaluate_nrms(&current, val_data, &solver)?;
    let mut best = Snapshot {
        epoch: 0,
        val_nrms: init_val,
        parameters: params.clone(),
    };
    let mut log = Vec::with_capacity(config.epochs);
    info!(
        "training {} model + {} encoder parameters, {batches} batches of {batch_size} per epoch, initial val NRMS {init_val:.5}",
        current.params.n_free(),
        current.encoder.n_params()
    );

    for epoch in 0..config.epochs {
        let lr = config.learning_rate(epoch);
        let mut epoch_loss = 0.0;
        for batch in 0..batches {
            let fail = |e: Error| Error::SolverFailure {
                epoch: epoch + 1,
                batch,
                source: Box::new(e),
            };
            let starts = sample_batch(train_data.len(), horizon, n_lag, batch_size, &mut rng)
                .map_err(fail)?;
            let (loss, grad) =
                batch_gradient(&current, train_data, &starts, horizon, &solver, pool.as_ref())
                    .map_err(fail)?;
            if !grad.is_finite() {
                return Err(fail(Error::NonFinite("batch gradient".into())));
            }
            epoch_loss += loss;
            let mut flat = grad.concat();
            for &i in &log_positions {
                flat[i] *= params[i];
            }

            let mut accepted = None;
            for (attempt, step_lr) in [lr, 0.5 * lr].into_iter().enumerate() {
                let mut cand_z = z.clone();
                let mut cand_adam = adam.clone();
                adam_step(&mut cand_z, &mut cand_adam, &flat, step_lr)?;
                let mut cand = cand_z.clone();
                for &i in &log_positions {
                    cand[i] = cand_z[i].exp();
                }
                let model = current.with_parameters(&cand)?;
                if admissible(&model, &solver) {
                    accepted = Some((cand_z, cand, cand_adam, model));
                    break;
                }
                warn!("epoch {} batch {batch}: update rejected (attempt {})", epoch + 1, attempt + 1);
            }
            let Some((cand_z, cand, cand_adam, model)) = accepted else {
                return Err(fail(Error::SingularJacobian(
                    "update rejected twice, even with a halved learning rate".into(),
                )));
            };
            z = cand_z;
            params = cand;
            adam = cand_adam;
            current = model;
        }
        let val = evaluate_nrms(&current, val_data, &solver).map_err(|e| Error::SolverFailure {
            epoch: epoch + 1,
            batch: batches,
            source: Box::new(e),
        })?;
        if val < best.val_nrms {
            best = Snapshot {
                epoch: epoch + 1,
                val_nrms: val,
                parameters: params.clone(),
            };
        }
        let rec = EpochRecord {
            epoch: epoch + 1,
            train_loss: epoch_loss / batches as f64,
            val_nrms: val,
            lr,
        };
        debug!(
            "epoch {:4}  loss {:.6e}  val NRMS {:.6}  lr {:.2e}",
            rec.epoch, rec.train_loss, rec.val_nrms, rec.lr
        );
        log.push(rec);
    }
    info!("best validation NRMS {:.6} at epoch {}", best.val_nrms, best.epoch);
    Ok(TrainState {
        current,
        adam,
        best,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nrms_definitions() {
        let y: Vec<Vec<f64>> = (0..100).map(|k| vec![(k as f64 * 0.3).sin()]).collect();
        assert_eq!(nrms(&y, &y).unwrap(), 0.0);
        let m = y.iter().map(|v| v[0]).sum::<f64>() / 100.0;
        let mean_pred = vec![vec![m]; 100];
        assert!((nrms(&y, &mean_pred).unwrap() - 1.0).abs() < 1e-12);
        assert!(nrms(&[vec![1.0], vec![1.0]], &[vec![0.0], vec![0.0]]).is_err());
        assert!(nrms(&y, &y[1..]).is_err());
    }

    #[test]
    fn multi_channel_nrms_is_root_mean_square() {
        let y: Vec<Vec<f64>> = (0..200)
            .map(|k| vec![(k as f64 * 0.1).sin(), 3.0 * (k as f64 * 0.2).cos()])
            .collect();
        let mean0 = y.iter().map(|v| v[0]).sum::<f64>() / 200.0;
        // channel 0 predicted by its mean (NRMS 1), channel 1 exact (NRMS 0)
        let p: Vec<Vec<f64>> = y.iter().map(|v| vec![mean0, v[1]]).collect();
        assert!((nrms(&y, &p).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn schedule_is_geometric() {
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        assert!((cfg.learning_rate(0) - 1e-2).abs() < 1e-18);
        assert!((cfg.learning_rate(1) - 1e-2 * 0.1f64.sqrt()).abs() < 1e-15);
        assert!((cfg.learning_rate(2) - 1e-3).abs() < 1e-17);
    }
}
