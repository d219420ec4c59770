//! Reverse-mode gradients of the truncated simulation loss.
//!
//! A backward-Euler step is the implicit map `J_r x_n = (E/h) x_{n−1} + G u_n`.
//! Its adjoint needs one transposed solve with the shared LU factors of
//! `J_r`: with `λ = J_r⁻ᵀ x̄_n`,
//!
//! ```text
//! x̄_{n−1} = (E/h)ᵀ λ
//! Ē += −λ (x_n − x_{n−1})ᵀ / h
//! J̄ +=  λ (Q x_n)ᵀ
//! R̄ += −λ (Q x_n)ᵀ
//! Ḡ +=  λ u_nᵀ
//! ```
//!
//! Matrix adjoints are pulled back through `E = L_E L_Eᵀ`, `R = L_R L_Rᵀ`
//! and `J = ½(M − Mᵀ)` once per subsection.

use crate::error::{Error, Result};
use crate::ident::encoder::LinearEncoder;
use crate::model::{OutputMap, PhDaeModel, PhDaeParams};
use crate::numerics::Matrix;
use crate::scalar::Scalar;
use crate::solver::{SolverConfig, StepSolver, StepWork};

/// One training window: `n_lag` past inputs, `n_lag + 1` past outputs
/// (ending at the subsection start `τ`), then `T` inputs and targets
/// starting at `τ`.
#[derive(Debug, Clone, Copy)]
pub struct Subsection<'a, T> {
    pub past_inputs: &'a [Vec<T>],
    pub past_outputs: &'a [Vec<T>],
    pub inputs: &'a [Vec<T>],
    pub targets: &'a [Vec<T>],
}

impl<'a, T> Subsection<'a, T> {
    /// Window of `inputs`/`outputs` starting at `start` with the encoder
    /// history before it.
    pub fn at(
        inputs: &'a [Vec<T>],
        outputs: &'a [Vec<T>],
        start: usize,
        n_lag: usize,
        horizon: usize,
    ) -> Result<Self> {
        if start < n_lag || start + horizon > inputs.len() || inputs.len() != outputs.len() {
            return Err(Error::InsufficientData(format!(
                "subsection at {start} (lag {n_lag}, horizon {horizon}) in {} samples",
                inputs.len()
            )));
        }
        Ok(Self {
            past_inputs: &inputs[start - n_lag..start],
            past_outputs: &outputs[start - n_lag..=start],
            inputs: &inputs[start..start + horizon],
            targets: &outputs[start..start + horizon],
        })
    }

    pub fn horizon(&self) -> usize {
        self.targets.len()
    }
}

/// Adjoints with respect to the assembled system matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixAdjoints<T: Scalar> {
    pub e: Matrix<T>,
    pub j: Matrix<T>,
    pub r: Matrix<T>,
    pub g: Matrix<T>,
}

impl<T: Scalar> MatrixAdjoints<T> {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            e: Matrix::zeros(n, n),
            j: Matrix::zeros(n, n),
            r: Matrix::zeros(n, n),
            g: Matrix::zeros(n, m),
        }
    }
}

/// Gradient with respect to model parameters θ and encoder parameters η.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub d_theta: Vec<T>,
    pub d_eta: Vec<T>,
}

impl<T: Scalar> Gradient<T> {
    pub fn zeros(n_theta: usize, n_eta: usize) -> Self {
        Self {
            d_theta: vec![T::zero(); n_theta],
            d_eta: vec![T::zero(); n_eta],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.d_theta.iter_mut().zip(&other.d_theta) {
            *a = *a + b;
        }
        for (a, &b) in self.d_eta.iter_mut().zip(&other.d_eta) {
            *a = *a + b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in self.d_theta.iter_mut().chain(self.d_eta.iter_mut()) {
            *a = *a * s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_theta.iter().chain(&self.d_eta).all(|v| v.is_finite())
    }

    /// θ then η.
    pub fn concat(&self) -> Vec<T> {
        let mut v = self.d_theta.clone();
        v.extend_from_slice(&self.d_eta);
        v
    }
}

/// States around one solver step.
#[derive(Debug, Clone, PartialEq)]
pub struct TapeRecord<T> {
    pub x_prev: Vec<T>,
    pub u: Vec<T>,
    pub x: Vec<T>,
}

/// Forward states of one subsection; `J_r` factors live in the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTape<T> {
    pub records: Vec<TapeRecord<T>>,
}

/// Reverse pass through one step. Returns `x̄_{n−1}` and the step's
/// contribution to the matrix adjoints.
pub fn step_adjoint<T: Scalar>(
    solver: &StepSolver<T>,
    record: &TapeRecord<T>,
    x_bar: &[T],
) -> Result<(Vec<T>, MatrixAdjoints<T>)> {
    let model = solver.model();
    let (n, m) = (model.n(), model.m());
    if x_bar.len() != n || record.x.len() != n || record.x_prev.len() != n || record.u.len() != m {
        return Err(Error::dims("tape record or adjoint does not match the model"));
    }
    let mut acc = MatrixAdjoints::zeros(n, m);
    let mut x_bar_prev = vec![T::zero(); n];
    let mut scratch = StepScratch::new(n);
    accumulate_step_adjoint(
        solver,
        (&record.x_prev, &record.u, &record.x),
        x_bar,
        &mut acc,
        &mut x_bar_prev,
        &mut scratch,
    );
    finish_r(&mut acc);
    Ok((x_bar_prev, acc))
}

fn finish_r<T: Scalar>(acc: &mut MatrixAdjoints<T>) {
    acc.r = acc.j.scale(-T::one());
}

struct StepScratch<T> {
    lambda: Vec<T>,
    work: Vec<T>,
    qx: Vec<T>,
    dx: Vec<T>,
}

impl<T: Scalar> StepScratch<T> {
    fn new(n: usize) -> Self {
        Self {
            lambda: vec![T::zero(); n],
            work: vec![T::zero(); n],
            qx: vec![T::zero(); n],
            dx: vec![T::zero(); n],
        }
    }
}

/// Adds the contribution of the step `(x_prev, u) -> x` to `acc` and
/// overwrites `x_bar_prev`. `R̄` is left alone: it always equals `−J̄`
/// and is filled in by [`finish_r`].
fn accumulate_step_adjoint<T: Scalar>(
    solver: &StepSolver<T>,
    (x_prev, u, x): (&[T], &[T], &[T]),
    x_bar: &[T],
    acc: &mut MatrixAdjoints<T>,
    x_bar_prev: &mut [T],
    s: &mut StepScratch<T>,
) {
    let model = solver.model();
    let inv_h = T::one() / solver.config().h;
    solver
        .factors()
        .solve_transposed_with(x_bar, &mut s.work, &mut s.lambda);
    solver.e_over_h().matvec_t_into(&s.lambda, x_bar_prev);
    model.q.matvec_into(x, &mut s.qx);
    for ((d, &a), &b) in s.dx.iter_mut().zip(x).zip(x_prev) {
        *d = a - b;
    }
    acc.e.add_outer(-inv_h, &s.lambda, &s.dx);
    acc.j.add_outer(T::one(), &s.lambda, &s.qx);
    acc.g.add_outer(T::one(), &s.lambda, u);
}

/// Pulls matrix adjoints back to the free entries of the factors.
pub fn param_gradient<T: Scalar>(params: &PhDaeParams<T>, adj: &MatrixAdjoints<T>) -> Vec<T> {
    let n = params.n();
    let half = T::lit(0.5);
    let mut m_bar = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m_bar[(i, j)] = half * (adj.j[(i, j)] - adj.j[(j, i)]);
        }
    }
    // d(L Lᵀ) pulls back to (Ā + Āᵀ) L.
    let sym_times = |a: &Matrix<T>, l: &Matrix<T>| -> Matrix<T> {
        let sym = a.add(&a.transpose()).expect("square");
        sym.matmul(l).expect("square")
    };
    let l_r_bar = sym_times(&adj.r, params.l_r.value());
    let l_e_bar = sym_times(&adj.e, params.l_e.value());
    let mut out = Vec::with_capacity(params.n_free());
    for (part, bar) in params.parts().iter().zip([&m_bar, &l_r_bar, &l_e_bar, &adj.g]) {
        let data = bar.as_slice();
        out.extend(part.mask.free_indices().map(|k| data[k]));
    }
    out
}

/// Assembled model and factorized step for one parameter value, shared by
/// every subsection of a batch.
#[derive(Debug, Clone)]
struct Forward<T> {
    loss: T,
    z: Vec<T>,
    states: Vec<T>,
    errors: Vec<T>,
}

pub struct SubsectionEvaluator<'a, T: Scalar> {
    params: &'a PhDaeParams<T>,
    encoder: &'a LinearEncoder<T>,
    outputs: &'a OutputMap<T>,
    solver: StepSolver<T>,
}

impl<'a, T: Scalar> SubsectionEvaluator<'a, T> {
    pub fn new(
        params: &'a PhDaeParams<T>,
        encoder: &'a LinearEncoder<T>,
        outputs: &'a OutputMap<T>,
        config: &SolverConfig<T>,
    ) -> Result<Self> {
        if encoder.n_states() != params.n() {
            return Err(Error::dims(format!(
                "encoder produces {} states, model has {}",
                encoder.n_states(),
                params.n()
            )));
        }
        if outputs.channels(params.m()) != encoder.n_outputs {
            return Err(Error::dims(format!(
                "output map has {} channels, encoder reads {}",
                outputs.channels(params.m()),
                encoder.n_outputs
            )));
        }
        let model = params.assemble();
        Ok(Self {
            params,
            encoder,
            outputs,
            solver: StepSolver::new(&model, *config)?,
        })
    }

    pub fn model(&self) -> &PhDaeModel<T> {
        self.solver.model()
    }

    pub fn solver(&self) -> &StepSolver<T> {
        &self.solver
    }

    fn check(&self, sub: &Subsection<'_, T>) -> Result<()> {
        if sub.inputs.len() != sub.targets.len() {
            return Err(Error::dims("subsection inputs and targets differ in length"));
        }
        let ch = self.outputs.channels(self.params.m());
        if sub.targets.iter().any(|y| y.len() != ch) {
            return Err(Error::dims(format!("targets must have {ch} channels")));
        }
        if sub.inputs.iter().any(|u| u.len() != self.params.m()) {
            return Err(Error::dims("input width differs from the model's port count"));
        }
        Ok(())
    }

    /// Forward pass: encoder window, simulated states and output errors
    /// (both flattened per sample) and the normalized loss
    /// `Σ_k ‖ŷ_k − y_k‖² / T`.
    fn forward(&self, sub: &Subsection<'_, T>) -> Result<Forward<T>> {
        self.check(sub)?;
        let horizon = sub.horizon();
        let z = self.encoder.window(sub.past_inputs, sub.past_outputs)?;
        let n = self.params.n();
        let ch = self.outputs.channels(self.params.m());
        let mut states = vec![T::zero(); horizon * n];
        let mut errors = vec![T::zero(); horizon * ch];
        if horizon == 0 {
            return Ok(Forward {
                loss: T::zero(),
                z,
                states,
                errors,
            });
        }
        states[..n].copy_from_slice(&self.encoder.apply(&z));
        let mut work = StepWork::new(n);
        for k in 1..horizon {
            let (done, rest) = states.split_at_mut(k * n);
            self.solver
                .step_into(&done[(k - 1) * n..], &sub.inputs[k], &mut rest[..n], &mut work)
                .map_err(|e| Error::StepFailure {
                    step: k,
                    source: Box::new(e),
                })?;
        }
        let mut qx = vec![T::zero(); n];
        let mut sse = T::zero();
        let model = self.solver.model();
        for (k, y) in sub.targets.iter().enumerate() {
            let e = &mut errors[k * ch..(k + 1) * ch];
            self.outputs.observe_into(model, &states[k * n..(k + 1) * n], &mut qx, e);
            for (ek, &yk) in e.iter_mut().zip(y) {
                *ek = *ek - yk;
                sse = sse + *ek * *ek;
            }
        }
        let loss = sse / T::lit(horizon as f64);
        if !loss.is_finite() {
            return Err(Error::NonFinite("subsection loss".into()));
        }
        Ok(Forward {
            loss,
            z,
            states,
            errors,
        })
    }

    pub fn loss(&self, sub: &Subsection<'_, T>) -> Result<T> {
        Ok(self.forward(sub)?.loss)
    }

    /// Encoder state followed by the simulated trajectory.
    pub fn tape(&self, sub: &Subsection<'_, T>) -> Result<AdjointTape<T>> {
        let states = self.forward(sub)?.states;
        let n = self.params.n();
        let records = (1..sub.horizon())
            .map(|k| TapeRecord {
                x_prev: states[(k - 1) * n..k * n].to_vec(),
                u: sub.inputs[k].clone(),
                x: states[k * n..(k + 1) * n].to_vec(),
            })
            .collect();
        Ok(AdjointTape { records })
    }

    /// Loss and matrix-level adjoints plus `x̄_τ` and the encoder window.
    fn backward(
        &self,
        sub: &Subsection<'_, T>,
    ) -> Result<(T, MatrixAdjoints<T>, Vec<T>, Vec<T>)> {
        let model = self.solver.model();
        let (n, m) = (model.n(), model.m());
        let ch = self.outputs.channels(m);
        let Forward {
            loss,
            z,
            states,
            errors,
        } = self.forward(sub)?;
        let mut acc = MatrixAdjoints::zeros(n, m);
        let horizon = sub.horizon();
        if horizon == 0 {
            return Ok((loss, acc, vec![T::zero(); n], z));
        }
        let scale = T::lit(2.0) / T::lit(horizon as f64);
        let mut y_bar = vec![T::zero(); ch];
        let mut qtg = vec![T::zero(); n];
        let mut qx = vec![T::zero(); n];
        let mut x_bar = vec![T::zero(); n];
        let mut x_bar_prev = vec![T::zero(); n];
        let mut scratch = StepScratch::new(n);
        for k in (0..horizon).rev() {
            // Output map y = [Gᵀ Q x; S x].
            let x = &states[k * n..(k + 1) * n];
            for (b, &e) in y_bar.iter_mut().zip(&errors[k * ch..(k + 1) * ch]) {
                *b = e * scale;
            }
            let (port_bar, sel_bar) = y_bar.split_at(m);
            model.g.matvec_into(port_bar, &mut qtg);
            model.q.matvec_t_into(&qtg, &mut qx);
            for (xb, &v) in x_bar.iter_mut().zip(&qx) {
                *xb = *xb + v;
            }
            model.q.matvec_into(x, &mut qx);
            acc.g.add_outer(T::one(), &qx, port_bar);
            if let Some(s) = &self.outputs.selector {
                s.matvec_t_into(sel_bar, &mut qx);
                for (xb, &v) in x_bar.iter_mut().zip(&qx) {
                    *xb = *xb + v;
                }
            }
            if k == 0 {
                break;
            }
            accumulate_step_adjoint(
                &self.solver,
                (&states[(k - 1) * n..k * n], &sub.inputs[k], x),
                &x_bar,
                &mut acc,
                &mut x_bar_prev,
                &mut scratch,
            );
            std::mem::swap(&mut x_bar, &mut x_bar_prev);
        }
        finish_r(&mut acc);
        Ok((loss, acc, x_bar, z))
    }

    /// Loss and its gradient with respect to (θ, η).
    pub fn gradient(&self, sub: &Subsection<'_, T>) -> Result<(T, Gradient<T>)> {
        let (loss, acc, x0_bar, z) = self.backward(sub)?;
        let d_theta = param_gradient(self.params, &acc);
        let mut w_bar = Matrix::zeros(self.encoder.weight.rows(), self.encoder.weight.cols());
        w_bar.add_outer(T::one(), &x0_bar, &z);
        let mut d_eta = w_bar.into_vec();
        d_eta.extend_from_slice(&x0_bar);
        Ok((loss, Gradient { d_theta, d_eta }))
    }
}

/// Loss and adjoint gradient of one subsection.
pub fn subsection_gradient<T: Scalar>(
    params: &PhDaeParams<T>,
    encoder: &LinearEncoder<T>,
    outputs: &OutputMap<T>,
    sub: &Subsection<'_, T>,
    config: &SolverConfig<T>,
) -> Result<(T, Gradient<T>)> {
    SubsectionEvaluator::new(params, encoder, outputs, config)?.gradient(sub)
}

/// Central differences `(f(x + δᵢ eᵢ) − f(x − δᵢ eᵢ)) / 2δᵢ` with
/// `δᵢ = δ · max(1, |xᵢ|)`.
pub fn central_difference<T: Scalar>(
    f: impl Fn(&[T]) -> Result<T>,
    x: &[T],
    delta: T,
) -> Result<Vec<T>> {
    if !(delta > T::zero()) {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let step = delta * x[i].abs().max(T::one());
        probe[i] = x[i] + step;
        let plus = f(&probe)?;
        probe[i] = x[i] - step;
        let minus = f(&probe)?;
        probe[i] = x[i];
        out.push((plus - minus) / (step + step));
    }
    Ok(out)
}

/// Finite-difference counterpart of [`subsection_gradient`].
pub fn finite_difference_gradient<T: Scalar>(
    params: &PhDaeParams<T>,
    encoder: &LinearEncoder<T>,
    outputs: &OutputMap<T>,
    sub: &Subsection<'_, T>,
    config: &SolverConfig<T>,
    delta: T,
) -> Result<Gradient<T>> {
    let theta = params.flatten();
    let d_theta = central_difference(
        |th| {
            let p = params.unflatten(th)?;
            SubsectionEvaluator::new(&p, encoder, outputs, config)?.loss(sub)
        },
        &theta,
        delta,
    )?;
    let d_eta = central_difference(
        |eta| {
            let enc = encoder.with_params(eta)?;
            SubsectionEvaluator::new(params, &enc, outputs, config)?.loss(sub)
        },
        &encoder.flatten(),
        delta,
    )?;
    Ok(Gradient { d_theta, d_eta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MaskedMatrix, StructuralMask};

    fn scalar_solver(e: f64, r: f64) -> StepSolver<f64> {
        let model = PhDaeModel {
            e: Matrix::from_rows(&[[e]]),
            j: Matrix::zeros(1, 1),
            r: Matrix::from_rows(&[[r]]),
            q: Matrix::identity(1),
            g: Matrix::from_rows(&[[1.0]]),
        };
        StepSolver::new(&model, SolverConfig::new(0.1)).unwrap()
    }

    fn record(solver: &StepSolver<f64>) -> TapeRecord<f64> {
        let x = solver.step(&[0.0], &[1.0]).unwrap();
        TapeRecord {
            x_prev: vec![0.0],
            u: vec![1.0],
            x,
        }
    }

    #[test]
    fn zero_adjoint_gives_zero() {
        let s = scalar_solver(1.0, 1.0);
        let (prev, adj) = step_adjoint(&s, &record(&s), &[0.0]).unwrap();
        assert_eq!(prev, vec![0.0]);
        assert_eq!(adj, MatrixAdjoints::zeros(1, 1));
    }

    #[test]
    fn scalar_dissipation_derivative() {
        // x_n = 1 / (10 + ρ); d x_n / dρ = −1/121 at ρ = 1.
        let s = scalar_solver(1.0, 1.0);
        let (_, adj) = step_adjoint(&s, &record(&s), &[1.0]).unwrap();
        let fd = {
            let f = |rho: f64| scalar_solver(1.0, rho).step(&[0.0], &[1.0]).unwrap()[0];
            (f(1.0 + 1e-6) - f(1.0 - 1e-6)) / 2e-6
        };
        assert!((adj.r[(0, 0)] + 1.0 / 121.0).abs() < 1e-15);
        assert!((fd + 1.0 / 121.0).abs() < 1e-9);
    }

    #[test]
    fn scalar_descriptor_derivative() {
        // x_n = 1 / (10 ε + 1); d x_n / dε = −10/121 at ε = 1.
        let s = scalar_solver(1.0, 1.0);
        let (prev, adj) = step_adjoint(&s, &record(&s), &[1.0]).unwrap();
        let fd = {
            let f = |e: f64| scalar_solver(e, 1.0).step(&[0.0], &[1.0]).unwrap()[0];
            (f(1.0 + 1e-6) - f(1.0 - 1e-6)) / 2e-6
        };
        assert!((adj.e[(0, 0)] + 10.0 / 121.0).abs() < 1e-15);
        assert!((fd + 10.0 / 121.0).abs() < 1e-8);
        // x̄_prev = (E/h) λ = 10/11.
        assert!((prev[0] - 10.0 / 11.0).abs() < 1e-14);
        // d x_n / d u = 1/11.
        assert!((adj.g[(0, 0)] - 1.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn central_difference_quadratic() {
        let g = central_difference(|x: &[f64]| Ok(x[0] * x[0]), &[3.0], 1e-4).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-7);
        assert!(central_difference(|x: &[f64]| Ok(x[0]), &[1.0], 0.0).is_err());
    }

    fn toy() -> (PhDaeParams<f64>, LinearEncoder<f64>, OutputMap<f64>) {
        let params = PhDaeParams::new(
            MaskedMatrix::new(Matrix::zeros(2, 2), StructuralMask::strictly_lower(2)).unwrap(),
            MaskedMatrix::new(Matrix::diag(&[0.8, 0.5]), StructuralMask::diagonal(2, &[0, 1]))
                .unwrap(),
            MaskedMatrix::new(Matrix::diag(&[0.7, 0.0]), StructuralMask::diagonal(2, &[0]))
                .unwrap(),
            MaskedMatrix::frozen(Matrix::column(&[1.0, 1.0])),
        )
        .unwrap();
        let mut encoder = LinearEncoder::zeros(2, 1, 1, 1);
        encoder.bias = vec![0.1, -0.2];
        (params, encoder, OutputMap::port_only())
    }

    #[test]
    fn empty_horizon_is_zero() {
        let (params, encoder, outputs) = toy();
        let u = vec![vec![1.0]];
        let y = vec![vec![0.5], vec![0.25]];
        let sub = Subsection {
            past_inputs: &u,
            past_outputs: &y,
            inputs: &[],
            targets: &[],
        };
        let (loss, g) =
            subsection_gradient(&params, &encoder, &outputs, &sub, &SolverConfig::new(0.1)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.concat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let (params, encoder, outputs) = toy();
        let cfg = SolverConfig::new(0.1);
        let inputs: Vec<Vec<f64>> = (0..6).map(|k| vec![(k as f64 * 0.7).sin()]).collect();
        let eval = SubsectionEvaluator::new(&params, &encoder, &outputs, &cfg).unwrap();
        let x0 = encoder.apply(&[0.0, 0.0, 0.0]);
        let traj = eval.solver().simulate(&x0, &inputs[1..]).unwrap();
        let mut targets = traj.outputs.clone();
        targets.truncate(4);
        let past_u = vec![vec![0.0]];
        let past_y = vec![vec![0.0], vec![0.0]];
        let sub = Subsection {
            past_inputs: &past_u,
            past_outputs: &past_y,
            inputs: &inputs[1..5],
            targets: &targets,
        };
        let (loss, g) = eval.gradient(&sub).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.concat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_finite_differences_on_toy() {
        let (params, encoder, outputs) = toy();
        let cfg = SolverConfig::new(0.1);
        let inputs: Vec<Vec<f64>> = (0..8).map(|k| vec![(k as f64).cos()]).collect();
        let outputs_data: Vec<Vec<f64>> = (0..8).map(|k| vec![0.3 * (k as f64).sin()]).collect();
        let sub = Subsection::at(&inputs, &outputs_data, 1, 1, 6).unwrap();
        let (_, g) = subsection_gradient(&params, &encoder, &outputs, &sub, &cfg).unwrap();
        let fd = finite_difference_gradient(&params, &encoder, &outputs, &sub, &cfg, 1e-6).unwrap();
        for (a, b) in g.concat().iter().zip(fd.concat()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn tape_has_one_record_per_step() {
        let (params, encoder, outputs) = toy();
        let cfg = SolverConfig::new(0.1);
        let inputs: Vec<Vec<f64>> = (0..8).map(|k| vec![k as f64]).collect();
        let sub = Subsection::at(&inputs, &inputs, 2, 1, 5).unwrap();
        let eval = SubsectionEvaluator::new(&params, &encoder, &outputs, &cfg).unwrap();
        assert_eq!(eval.tape(&sub).unwrap().records.len(), 4);
        assert!(Subsection::at(&inputs, &inputs, 0, 1, 5).is_err());
        assert!(Subsection::at(&inputs, &inputs, 4, 1, 5).is_err());
    }
}
