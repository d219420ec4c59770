use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grad::{Gradient, Subsection, SubsectionEvaluator};
use crate::ident::encoder::LinearEncoder;
use crate::ident::IdentModel;
use crate::model::{OutputMap, PhDaeParams};
use crate::scalar::Scalar;
use crate::signals::Dataset;
use crate::solver::{simulate, SolverConfig};

/// `(1/T) Σ_{k<T} ‖y_{τ+k} − ŷ_{τ+k|τ}‖²` for one subsection.
pub fn subsection_loss<T: Scalar>(
    params: &PhDaeParams<T>,
    encoder: &LinearEncoder<T>,
    outputs: &OutputMap<T>,
    sub: &Subsection<'_, T>,
    config: &SolverConfig<T>,
) -> Result<T> {
    SubsectionEvaluator::new(params, encoder, outputs, config)?.loss(sub)
}

/// Truncated simulation loss over every valid subsection start, divided by
/// (number of subsections) · T.
///
/// Written against [`simulate`] directly rather than the batched evaluator.
pub fn full_subsection_loss(
    model: &IdentModel,
    data: &Dataset,
    horizon: usize,
    n_lag: usize,
    config: &SolverConfig<f64>,
) -> Result<f64> {
    let system = model.params.assemble();
    let n = data.len();
    if n < n_lag + horizon || horizon == 0 {
        return Err(Error::InsufficientData(format!(
            "{n} samples for lag {n_lag} and horizon {horizon}"
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for tau in n_lag..=n - horizon {
        let x0 = model
            .encoder
            .encode(&data.inputs[tau - n_lag..tau], &data.outputs[tau - n_lag..=tau])?;
        let traj = simulate(&system, &x0, &data.inputs[tau..tau + horizon], config)?;
        for (k, x) in traj.states.iter().enumerate() {
            let yhat = model.output_map.observe(&system, x)?;
            for (a, b) in yhat.iter().zip(&data.outputs[tau + k]) {
                total += (a - b) * (a - b);
            }
        }
        count += 1;
    }
    Ok(total / (count * horizon) as f64)
}

/// Mean loss and mean gradient over the subsections starting at `starts`.
///
/// Subsections may be evaluated in parallel; the reduction always runs in
/// the order of `starts`, so results do not depend on the worker count.
pub fn batch_gradient(
    model: &IdentModel,
    data: &Dataset,
    starts: &[usize],
    horizon: usize,
    config: &SolverConfig<f64>,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(f64, Gradient<f64>)> {
    let eval = SubsectionEvaluator::new(&model.params, &model.encoder, &model.output_map, config)?;
    let n_lag = model.encoder.n_lag;
    let one = |&tau: &usize| -> Result<(f64, Gradient<f64>)> {
        let sub = Subsection::at(&data.inputs, &data.outputs, tau, n_lag, horizon)?;
        eval.gradient(&sub)
    };
    let parts: Vec<Result<(f64, Gradient<f64>)>> = match pool {
        Some(p) => p.install(|| starts.par_iter().map(one).collect()),
        None => starts.iter().map(one).collect(),
    };
    let mut loss = 0.0;
    let mut grad = Gradient::zeros(model.params.n_free(), model.encoder.n_params());
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grad.add_assign(&g);
    }
    let scale = 1.0 / starts.len().max(1) as f64;
    grad.scale(scale);
    Ok((loss * scale, grad))
}
