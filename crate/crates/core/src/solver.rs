//! Backward-Euler integration of linear pH-DAEs with a Newton solve per
//! step.
//!
//! Each step solves `r(x_n) = (E/h)(x_n − x_{n−1}) − (J − R)Q x_n − G u_n = 0`.
//! Differential and algebraic rows are handled together, so no index
//! reduction is needed as long as the residual Jacobian
//! `J_r = E/h − JQ + RQ` is nonsingular.

use crate::error::{Error, Result};
use crate::model::PhDaeModel;
use crate::numerics::{lu_factor, norm2, LuFactors, Matrix};
use crate::scalar::Scalar;

/// Step size and Newton stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T> {
    /// Step size in seconds, equal to the sampling period.
    pub h: T,
    /// Newton stops once `‖Δx‖₂ < epsilon`.
    pub epsilon: T,
    pub max_newton_iters: usize,
}

impl<T: Scalar> SolverConfig<T> {
    pub fn new(h: T) -> Self {
        Self {
            h,
            epsilon: T::lit(1e-10).max(T::lit(1e3) * T::epsilon()),
            max_newton_iters: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > T::zero()) || !(self.epsilon > T::zero()) || self.max_newton_iters == 0 {
            return Err(Error::InvalidConfig(format!(
                "solver needs h > 0, epsilon > 0, max_newton_iters >= 1 (got h={}, epsilon={}, iters={})",
                self.h, self.epsilon, self.max_newton_iters
            )));
        }
        Ok(())
    }
}

/// Simulated states and port outputs at consecutive sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub states: Vec<Vec<T>>,
    pub outputs: Vec<Vec<T>>,
    pub times: Vec<usize>,
}

impl<T> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Outcome of one Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome<T> {
    pub x: Vec<T>,
    /// Corrections applied before the stopping test succeeded.
    pub iterations: usize,
    /// Norm of the correction that triggered the stop.
    pub final_correction: T,
}

fn check_vec<T>(what: &str, v: &[T], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::dims(format!("{what} has length {}, expected {len}", v.len())));
    }
    Ok(())
}

/// Scratch buffers for [`StepSolver::step_into`].
#[derive(Debug, Clone)]
pub struct StepWork<T> {
    b: Vec<T>,
    r: Vec<T>,
    dx: Vec<T>,
}

impl<T: Scalar> StepWork<T> {
    pub fn new(n: usize) -> Self {
        Self {
            b: vec![T::zero(); n],
            r: vec![T::zero(); n],
            dx: vec![T::zero(); n],
        }
    }
}

/// Backward-Euler residual of one step.
pub fn residual<T: Scalar>(
    model: &PhDaeModel<T>,
    x_n: &[T],
    x_prev: &[T],
    u_n: &[T],
    h: T,
) -> Result<Vec<T>> {
    model.check_dims()?;
    let n = model.n();
    check_vec("x_n", x_n, n)?;
    check_vec("x_prev", x_prev, n)?;
    check_vec("u_n", u_n, model.m())?;
    let dx: Vec<T> = x_n.iter().zip(x_prev).map(|(&a, &b)| a - b).collect();
    let e_dx = model.e.matvec(&dx)?;
    let qx = model.q.matvec(x_n)?;
    let jqx = model.j.matvec(&qx)?;
    let rqx = model.r.matvec(&qx)?;
    let gu = model.g.matvec(u_n)?;
    Ok((0..n)
        .map(|i| e_dx[i] / h - (jqx[i] - rqx[i]) - gu[i])
        .collect())
}

/// `J_r = E/h − JQ + RQ`; independent of the state.
pub fn residual_jacobian<T: Scalar>(model: &PhDaeModel<T>, h: T) -> Result<Matrix<T>> {
    model.check_dims()?;
    let jq = model.j.matmul(&model.q)?;
    let rq = model.r.matmul(&model.q)?;
    model.e.scale(T::one() / h).sub(&jq)?.add(&rq)
}

/// Per-model step machinery: `J_r`, its LU factors and `E/h` are built once
/// and shared by every step.
#[derive(Debug, Clone)]
pub struct StepSolver<T: Scalar> {
    model: PhDaeModel<T>,
    config: SolverConfig<T>,
    jac: Matrix<T>,
    lu: LuFactors<T>,
    e_over_h: Matrix<T>,
}

impl<T: Scalar> StepSolver<T> {
    pub fn new(model: &PhDaeModel<T>, config: SolverConfig<T>) -> Result<Self> {
        config.validate()?;
        let jac = residual_jacobian(model, config.h)?;
        let lu = lu_factor(&jac).map_err(|e| match e {
            Error::SingularMatrix { .. } => Error::SingularJacobian(e.to_string()),
            other => other,
        })?;
        Ok(Self {
            model: model.clone(),
            config,
            e_over_h: model.e.scale(T::one() / config.h),
            jac,
            lu,
        })
    }

    pub fn model(&self) -> &PhDaeModel<T> {
        &self.model
    }

    pub fn config(&self) -> &SolverConfig<T> {
        &self.config
    }

    pub fn jacobian(&self) -> &Matrix<T> {
        &self.jac
    }

    pub fn factors(&self) -> &LuFactors<T> {
        &self.lu
    }

    pub fn e_over_h(&self) -> &Matrix<T> {
        &self.e_over_h
    }

    /// `b = −(E/h) x_prev − G u`, so that `r(x) = J_r x + b`.
    fn offset(&self, x_prev: &[T], u_n: &[T], b: &mut [T]) {
        let n = self.model.n();
        for (i, bi) in b.iter_mut().enumerate().take(n) {
            let mut s = T::zero();
            for (&a, &x) in self.e_over_h.row(i).iter().zip(x_prev) {
                s = s + a * x;
            }
            for (&g, &u) in self.model.g.row(i).iter().zip(u_n) {
                s = s + g * u;
            }
            *bi = -s;
        }
    }

    /// Newton iteration on the step residual starting from `x_init`.
    pub fn newton_step(&self, x_prev: &[T], u_n: &[T], x_init: &[T]) -> Result<NewtonOutcome<T>> {
        let n = self.model.n();
        check_vec("x_prev", x_prev, n)?;
        check_vec("x_init", x_init, n)?;
        check_vec("u_n", u_n, self.model.m())?;
        let mut x = x_init.to_vec();
        let mut work = StepWork::new(n);
        let (iterations, final_correction) = self.newton_in_place(x_prev, u_n, &mut x, &mut work)?;
        Ok(NewtonOutcome {
            x,
            iterations,
            final_correction,
        })
    }

    /// Unchecked Newton iteration; `x` holds the initial guess on entry and
    /// the solution on exit. Returns (applied corrections, last correction).
    pub(crate) fn newton_in_place(
        &self,
        x_prev: &[T],
        u_n: &[T],
        x: &mut [T],
        w: &mut StepWork<T>,
    ) -> Result<(usize, T)> {
        self.offset(x_prev, u_n, &mut w.b);
        let mut applied = 0;
        loop {
            self.jac.matvec_into(x, &mut w.r);
            for (ri, &bi) in w.r.iter_mut().zip(&w.b) {
                *ri = -(*ri + bi);
            }
            self.lu.solve_into(&w.r, &mut w.dx);
            let step = norm2(&w.dx);
            if !step.is_finite() {
                return Err(Error::NonFinite("Newton correction".into()));
            }
            for (xi, &d) in x.iter_mut().zip(&w.dx) {
                *xi = *xi + d;
            }
            if step < self.config.epsilon {
                return Ok((applied, step));
            }
            applied += 1;
            if applied > self.config.max_newton_iters {
                return Err(Error::NoConvergence {
                    iterations: applied,
                    last_step: step.as_f64(),
                });
            }
        }
    }

    /// One step warm-started from the previous state.
    pub fn step(&self, x_prev: &[T], u_n: &[T]) -> Result<Vec<T>> {
        Ok(self.newton_step(x_prev, u_n, x_prev)?.x)
    }

    /// Allocation-free [`step`](Self::step) for hot loops.
    pub fn step_into(&self, x_prev: &[T], u_n: &[T], x: &mut [T], work: &mut StepWork<T>) -> Result<()> {
        let n = self.model.n();
        check_vec("x_prev", x_prev, n)?;
        check_vec("x", x, n)?;
        check_vec("u_n", u_n, self.model.m())?;
        x.copy_from_slice(x_prev);
        self.newton_in_place(x_prev, u_n, x, work).map(|_| ())
    }

    /// Simulates from `x0`; `inputs[k]` is the input at sample `k`, so
    /// `inputs[0]` only labels the initial time. Returns one state per input.
    pub fn simulate(&self, x0: &[T], inputs: &[Vec<T>]) -> Result<Trajectory<T>> {
        let n = self.model.n();
        check_vec("x0", x0, n)?;
        let mut states = Vec::with_capacity(inputs.len());
        let mut outputs = Vec::with_capacity(inputs.len());
        if inputs.is_empty() {
            return Ok(Trajectory {
                states,
                outputs,
                times: Vec::new(),
            });
        }
        states.push(x0.to_vec());
        outputs.push(self.model.output(x0, None)?);
        for (k, u) in inputs.iter().enumerate().skip(1) {
            let x = self
                .step(&states[k - 1], u)
                .map_err(|e| Error::StepFailure {
                    step: k,
                    source: Box::new(e),
                })?;
            outputs.push(self.model.output(&x, None)?);
            states.push(x);
        }
        Ok(Trajectory {
            states,
            outputs,
            times: (0..inputs.len()).collect(),
        })
    }
}

/// One backward-Euler step; see [`StepSolver::newton_step`].
pub fn newton_step<T: Scalar>(
    model: &PhDaeModel<T>,
    x_prev: &[T],
    u_n: &[T],
    config: &SolverConfig<T>,
    x_init: &[T],
) -> Result<NewtonOutcome<T>> {
    StepSolver::new(model, *config)?.newton_step(x_prev, u_n, x_init)
}

/// Simulates `model` from `x0`; see [`StepSolver::simulate`].
pub fn simulate<T: Scalar>(
    model: &PhDaeModel<T>,
    x0: &[T],
    inputs: &[Vec<T>],
    config: &SolverConfig<T>,
) -> Result<Trajectory<T>> {
    StepSolver::new(model, *config)?.simulate(x0, inputs)
}

/// Completes a differential-state guess with algebraic states that satisfy
/// the algebraic rows (zero rows of `E`) at input `u0`.
///
/// `x_diff` lists the differential states (zero columns of `E` excluded) in
/// their natural order.
pub fn consistent_initialize<T: Scalar>(
    model: &PhDaeModel<T>,
    x_diff: &[T],
    u0: &[T],
) -> Result<Vec<T>> {
    model.check_dims()?;
    let n = model.n();
    check_vec("u0", u0, model.m())?;
    let alg_rows = model.algebraic_rows();
    let alg_cols: Vec<usize> = (0..n)
        .filter(|&j| (0..n).all(|i| model.e[(i, j)] == T::zero()))
        .collect();
    if alg_rows.len() != alg_cols.len() {
        return Err(Error::SingularAlgebraicBlock);
    }
    let diff_cols: Vec<usize> = (0..n).filter(|j| !alg_cols.contains(j)).collect();
    check_vec("x_diff", x_diff, diff_cols.len())?;
    let mut x = vec![T::zero(); n];
    for (&j, &v) in diff_cols.iter().zip(x_diff) {
        x[j] = v;
    }
    if alg_rows.is_empty() {
        return Ok(x);
    }
    // Algebraic rows read 0 = K x + G u with K = (J − R) Q.
    let k = model.j.sub(&model.r)?.matmul(&model.q)?;
    let na = alg_rows.len();
    let mut block = Matrix::zeros(na, na);
    let mut rhs = vec![T::zero(); na];
    for (a, &i) in alg_rows.iter().enumerate() {
        for (b, &j) in alg_cols.iter().enumerate() {
            block[(a, b)] = k[(i, j)];
        }
        let known: T = diff_cols.iter().map(|&j| k[(i, j)] * x[j]).sum();
        let gu: T = model.g.row(i).iter().zip(u0).map(|(&g, &u)| g * u).sum();
        rhs[a] = -(known + gu);
    }
    let lu = lu_factor(&block).map_err(|_| Error::SingularAlgebraicBlock)?;
    let mut xa = vec![T::zero(); na];
    lu.solve_into(&rhs, &mut xa);
    for (&j, v) in alg_cols.iter().zip(xa) {
        x[j] = v;
    }
    Ok(x)
}
