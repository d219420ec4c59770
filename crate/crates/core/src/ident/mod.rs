//! Subsection-encoder output-error identification: encoder, truncated
//! simulation loss, mini-batching, Adam and the training loop.

pub mod adam;
pub mod batch;
pub mod encoder;
pub mod loss;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelDocument, OutputMap, PhDaeParams};
use crate::solver::SolverConfig;

pub use adam::{adam_step, AdamState};
pub use batch::{sample_batch, valid_starts};
pub use encoder::LinearEncoder;
pub use loss::{batch_gradient, full_subsection_loss, subsection_loss};
pub use train::{
    evaluate_nrms, nrms, predict, train, EpochRecord, Prediction, Snapshot, TrainState,
};

/// Optimizer and loss settings. Field names double as the JSON keys of the
/// `train` section of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Simulated samples per subsection (`T`).
    pub truncation_length: usize,
    /// Encoder history length; defaults to the state dimension.
    pub n_lag: Option<usize>,
    pub batch_size: usize,
    /// Defaults to the number of valid subsections divided by the batch size.
    pub batches_per_epoch: Option<usize>,
    pub lr_start: f64,
    pub lr_end: f64,
    pub epochs: usize,
    pub seed: u64,
    pub newton_epsilon: f64,
    pub max_newton_iters: usize,
    /// Std scale of the initial encoder weights.
    pub encoder_init_scale: f64,
    /// Worker threads for batch evaluation; 0 uses all available cores.
    pub workers: usize,
    /// Adam steps positive diagonal factor entries in log coordinates, so
    /// they move by relative amounts and cannot cross zero.
    pub log_diagonals: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            truncation_length: 40,
            n_lag: None,
            batch_size: 256,
            batches_per_epoch: None,
            lr_start: 1e-2,
            lr_end: 1e-3,
            epochs: 300,
            seed: 0,
            newton_epsilon: 1e-10,
            max_newton_iters: 20,
            encoder_init_scale: 0.1,
            workers: 0,
            log_diagonals: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.truncation_length == 0 {
            return bad("truncation_length must be at least 1");
        }
        if self.n_lag == Some(0) {
            return bad("n_lag must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return bad("learning rates need lr_start >= lr_end > 0");
        }
        if self.batches_per_epoch == Some(0) {
            return bad("batches_per_epoch must be at least 1");
        }
        Ok(())
    }

    pub fn n_lag_for(&self, n_states: usize) -> usize {
        self.n_lag.unwrap_or(n_states)
    }

    pub fn solver(&self, h: f64) -> SolverConfig<f64> {
        SolverConfig {
            h,
            epsilon: self.newton_epsilon,
            max_newton_iters: self.max_newton_iters,
        }
    }

    /// Geometric decay from `lr_start` at the first epoch to `lr_end` at
    /// the last.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }
}

/// Everything needed to simulate from data: model parameters, encoder and
/// the map to measured channels.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentModel {
    pub params: PhDaeParams<f64>,
    pub encoder: LinearEncoder<f64>,
    pub output_map: OutputMap<f64>,
}

/// On-disk form of an [`IdentModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub model: ModelDocument,
    pub encoder: LinearEncoder<f64>,
    pub output_map: OutputMap<f64>,
}

impl IdentModel {
    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            model: ModelDocument::from_params(&self.params),
            encoder: self.encoder.clone(),
            output_map: self.output_map.clone(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        let m = Self {
            params: file.model.params,
            encoder: file.encoder,
            output_map: file.output_map,
        };
        m.check()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn check(&self) -> Result<()> {
        if self.encoder.n_states() != self.params.n() {
            return Err(Error::dims("encoder state dimension differs from the model"));
        }
        if self.encoder.n_inputs != self.params.m() {
            return Err(Error::dims("encoder input width differs from the port count"));
        }
        if self.encoder.n_outputs != self.output_map.channels(self.params.m()) {
            return Err(Error::dims("encoder output width differs from the output map"));
        }
        Ok(())
    }

    /// θ followed by η.
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = self.params.flatten();
        v.extend(self.encoder.flatten());
        v
    }

    pub fn with_parameters(&self, p: &[f64]) -> Result<Self> {
        let k = self.params.n_free();
        if p.len() != k + self.encoder.n_params() {
            return Err(Error::dims("parameter vector length"));
        }
        Ok(Self {
            params: self.params.unflatten(&p[..k])?,
            encoder: self.encoder.with_params(&p[k..])?,
            output_map: self.output_map.clone(),
        })
    }
}
