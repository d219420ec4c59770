//! Port-Hamiltonian differential-algebraic models identified from
//! input/output data.
//!
//! A model `E ẋ = (J − R) Q x + G u`, `y = Gᵀ Q x` is parametrized through
//! factors (`J = ½(M_J − M_Jᵀ)`, `R = L_R L_Rᵀ`, `E = L_E L_Eᵀ`) so that every
//! parameter vector gives a passive model. [`solver`] integrates it with
//! backward Euler, [`grad`] differentiates truncated simulations by the
//! adjoint method, and [`ident`] fits the factors and a linear state encoder
//! with Adam. [`bench`] is the DC power network benchmark.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.

pub mod bench;
pub mod error;
pub mod grad;
pub mod ident;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod scalar;
pub mod signals;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = numerics::Matrix<f64>;
pub type PhDaeModel = model::PhDaeModel<f64>;
pub type PhDaeParams = model::PhDaeParams<f64>;
pub type MaskedMatrix = model::MaskedMatrix<f64>;
pub type OutputMap = model::OutputMap<f64>;
pub type SolverConfig = solver::SolverConfig<f64>;
pub type StepSolver = solver::StepSolver<f64>;
pub type LinearEncoder = ident::LinearEncoder<f64>;

pub use bench::{DcNetParams, ExperimentConfig};
pub use ident::{IdentModel, TrainConfig};
pub use model::StructuralMask;
pub use signals::Dataset;
