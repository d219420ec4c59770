//! DC power network benchmark: a generator feeding a load through a
//! π-model line, written as a pH-DAE with states `x = (I, V₁, V₂, I_G, I_R)`
//! and input `u = E_G`.
//!
//! The two resistor currents are algebraic states, so `E` has two zero rows.
//! Experiments here regenerate data, train and report test NRMS against
//! noise level and the recovered component values.

use std::fmt::Write as _;

use log::info;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::{evaluate_nrms, predict, train, IdentModel, LinearEncoder, TrainConfig};
use crate::model::{MaskedMatrix, OutputMap, PhDaeModel, PhDaeParams, StructuralMask};
use crate::numerics::Matrix;
use crate::rng::{derive_seed, stream, Stream};
use crate::signals::{add_noise, multisine, std_dev, Dataset, MultisineSpec, NoiseInfo};
use crate::solver::{consistent_initialize, SolverConfig, StepSolver};

/// Component values: henries, farads and ohms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcNetParams {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "R_L")]
    pub r_l: f64,
    #[serde(rename = "R_G")]
    pub r_g: f64,
    #[serde(rename = "R_R")]
    pub r_r: f64,
}

pub const PARAMETER_NAMES: [&str; 6] = ["L", "C1", "C2", "R_L", "R_G", "R_R"];

/// State indices of the measured capacitor voltages.
pub const VOLTAGE_STATES: [usize; 2] = [1, 2];

impl Default for DcNetParams {
    fn default() -> Self {
        Self::nominal()
    }
}

impl DcNetParams {
    pub fn nominal() -> Self {
        Self {
            l: 2.0,
            c1: 0.01,
            c2: 0.02,
            r_l: 1.0,
            r_g: 6.0,
            r_r: 3.0,
        }
    }

    pub fn values(&self) -> [f64; 6] {
        [self.l, self.c1, self.c2, self.r_l, self.r_g, self.r_r]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in PARAMETER_NAMES.iter().zip(self.values()) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    /// Reads the component values off an assembled model with the
    /// benchmark's diagonal `E` and `R`.
    pub fn from_model(model: &PhDaeModel<f64>) -> Self {
        Self {
            l: model.e[(0, 0)],
            c1: model.e[(1, 1)],
            c2: model.e[(2, 2)],
            r_l: model.r[(0, 0)],
            r_g: model.r[(3, 3)],
            r_r: model.r[(4, 4)],
        }
    }

    /// `|θ̂ − θ*| / θ*` per component, in percent.
    pub fn deviation_pct(&self, truth: &Self) -> [f64; 6] {
        let (a, b) = (self.values(), truth.values());
        std::array::from_fn(|i| 100.0 * (a[i] - b[i]).abs() / b[i])
    }
}

/// Interconnection of the network (fixed by topology).
pub fn structure_matrix() -> Matrix<f64> {
    Matrix::from_rows(&[
        [0.0, -1.0, 1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, -1.0, 0.0],
        [-1.0, 0.0, 0.0, 0.0, -1.0],
        [0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0],
    ])
}

pub fn input_matrix() -> Matrix<f64> {
    Matrix::column(&[0.0, 0.0, 0.0, 1.0, 0.0])
}

/// Model and masked parametrization of the network. `J`, `Q`, `G` and the
/// structural zeros are frozen; the six free entries are `√L, √C1, √C2` on
/// the diagonal of `L_E` and `√R_L, √R_G, √R_R` on the diagonal of `L_R`.
pub fn build_dc_network(p: &DcNetParams) -> Result<(PhDaeModel<f64>, PhDaeParams<f64>)> {
    p.validate()?;
    let l_e = Matrix::diag(&[p.l.sqrt(), p.c1.sqrt(), p.c2.sqrt(), 0.0, 0.0]);
    let l_r = Matrix::diag(&[p.r_l.sqrt(), 0.0, 0.0, p.r_g.sqrt(), p.r_r.sqrt()]);
    let params = PhDaeParams::new(
        MaskedMatrix::frozen(structure_matrix()),
        MaskedMatrix::new(l_r, StructuralMask::diagonal(5, &[0, 3, 4]))?,
        MaskedMatrix::new(l_e, StructuralMask::diagonal(5, &[0, 1, 2]))?,
        MaskedMatrix::frozen(input_matrix()),
    )?;
    let mut model = params.assemble();
    // Exact nominal values rather than squared square roots.
    model.e = Matrix::diag(&[p.l, p.c1, p.c2, 0.0, 0.0]);
    model.r = Matrix::diag(&[p.r_l, 0.0, 0.0, p.r_g, p.r_r]);
    Ok((model, params))
}

/// Which structure the identified model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModelStructure {
    /// Known topology: only the six component factors are free.
    #[default]
    DcMasked,
    /// Dense lower-triangular factors and free `M_J`; `G` stays fixed.
    Free,
}

/// Measured channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutputSet {
    /// `y = I_G`.
    #[default]
    Port,
    /// `(I_G, V₁, V₂)`.
    PortAndVoltages,
}

impl OutputSet {
    pub fn output_map(self) -> OutputMap<f64> {
        match self {
            OutputSet::Port => OutputMap::port_only(),
            OutputSet::PortAndVoltages => OutputMap::picking(5, &VOLTAGE_STATES),
        }
    }
}

/// Data generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_samples: usize,
    pub t_s: f64,
    pub f0: f64,
    pub n_sines: usize,
    /// `null` for noiseless data.
    pub snr_db: Option<f64>,
    pub outputs: OutputSet,
    /// Differential initial states are drawn from `[−r, r]`.
    pub initial_state_range: f64,
    /// Internal solver substeps per sample for the truth simulation.
    pub oversample: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            t_s: 0.005,
            f0: 0.1,
            n_sines: 40,
            snr_db: Some(20.0),
            outputs: OutputSet::Port,
            initial_state_range: 0.5,
            oversample: 1,
        }
    }
}

/// Benchmark-level settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub table1_snr_db: Vec<f64>,
    pub recovery_snr_db: f64,
    pub recovery_runs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            table1_snr_db: vec![30.0, 20.0, 10.0],
            recovery_snr_db: 40.0,
            recovery_runs: 10,
        }
    }
}

/// Whole experiment description; the JSON config file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; 0 uses all available cores.
    pub workers: usize,
    pub system: DcNetParams,
    pub data: DataConfig,
    pub model: ModelStructure,
    pub train: TrainConfig,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            system: DcNetParams::nominal(),
            data: DataConfig::default(),
            model: ModelStructure::default(),
            train: TrainConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if d.n_samples < 2 || !(d.t_s > 0.0) || d.oversample == 0 || d.n_sines == 0 {
            return Err(Error::InvalidConfig(
                "data needs n_samples >= 2, t_s > 0, oversample >= 1, n_sines >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Seeds and settings that reproduce one dataset exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub seed: u64,
    pub phases: Vec<f64>,
    pub initial_state: Vec<f64>,
    pub noise: NoiseInfo,
}

/// Simulates the network under a fresh multisine and initial state, then
/// adds output noise.
pub fn generate_dataset(
    system: &DcNetParams,
    cfg: &DataConfig,
    seed: u64,
    name: &str,
) -> Result<(Dataset, DatasetManifest)> {
    let (model, _) = build_dc_network(system)?;
    let spec = MultisineSpec::random(cfg.f0, cfg.n_sines, &mut stream(seed, Stream::Phases));
    let mut ic_rng = stream(seed, Stream::InitialState);
    let r = cfg.initial_state_range;
    let x_diff: Vec<f64> = (0..3)
        .map(|_| if r > 0.0 { ic_rng.random_range(-r..=r) } else { 0.0 })
        .collect();
    let u0 = multisine(&spec, 0.0);
    let x0 = consistent_initialize(&model, &x_diff, &[u0])?;

    let h = cfg.t_s / cfg.oversample as f64;
    let solver = StepSolver::new(&model, SolverConfig::new(h))?;
    let output_map = cfg.outputs.output_map();
    let mut inputs = Vec::with_capacity(cfg.n_samples);
    let mut clean = Vec::with_capacity(cfg.n_samples);
    let mut x = x0.clone();
    inputs.push(vec![u0]);
    clean.push(output_map.observe(&model, &x)?);
    for k in 1..cfg.n_samples {
        for s in 1..=cfg.oversample {
            let t = (k - 1) as f64 * cfg.t_s + s as f64 * h;
            x = solver
                .step(&x, &[multisine(&spec, t)])
                .map_err(|e| Error::StepFailure {
                    step: k,
                    source: Box::new(e),
                })?;
        }
        inputs.push(vec![multisine(&spec, k as f64 * cfg.t_s)]);
        clean.push(output_map.observe(&model, &x)?);
    }

    let channels = clean[0].len();
    let mut noise_rng = stream(seed, Stream::Noise);
    let mut outputs = clean.clone();
    let mut noise_std = Vec::with_capacity(channels);
    for c in 0..channels {
        let column: Vec<f64> = clean.iter().map(|y| y[c]).collect();
        let (noisy, std) = match cfg.snr_db {
            Some(snr) => add_noise(&column, snr, &mut noise_rng)?,
            None => (column, 0.0),
        };
        for (y, v) in outputs.iter_mut().zip(noisy) {
            y[c] = v;
        }
        noise_std.push(std);
    }
    let noise = NoiseInfo {
        snr_db: cfg.snr_db,
        noise_std,
        seed,
    };
    let data = Dataset {
        t_s: cfg.t_s,
        inputs,
        outputs,
        clean_outputs: Some(clean),
        noise: Some(noise.clone()),
    };
    let manifest = DatasetManifest {
        name: name.to_string(),
        seed,
        phases: spec.phases,
        initial_state: x0,
        noise,
    };
    Ok((data, manifest))
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Train, validation and test sets, each with its own input realization,
/// initial condition and noise.
pub fn generate_datasets(
    system: &DcNetParams,
    cfg: &DataConfig,
    seed: u64,
) -> Result<Vec<(Dataset, DatasetManifest)>> {
    SPLITS
        .iter()
        .enumerate()
        .map(|(i, name)| generate_dataset(system, cfg, derive_seed(seed, i as u64), name))
        .collect()
}

/// Untrained model for the benchmark: free factor entries uniform in
/// `[0.5, 1.5]`, random encoder.
pub fn initial_model(
    structure: ModelStructure,
    outputs: OutputSet,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<IdentModel> {
    let mut rng = stream(seed, Stream::Init);
    let mut params = match structure {
        ModelStructure::DcMasked => build_dc_network(&DcNetParams::nominal())?.1,
        ModelStructure::Free => PhDaeParams::unstructured(input_matrix()),
    };
    match structure {
        ModelStructure::DcMasked => {
            let theta: Vec<f64> = (0..params.n_free())
                .map(|_| rng.random_range(0.5..=1.5))
                .collect();
            params.set_theta(&theta)?;
        }
        ModelStructure::Free => params.randomize(&mut rng),
    }
    let output_map = outputs.output_map();
    let n = params.n();
    let encoder = LinearEncoder::random(
        n,
        train_cfg.n_lag_for(n),
        params.m(),
        output_map.channels(params.m()),
        train_cfg.encoder_init_scale,
        &mut stream(seed, Stream::Encoder),
    );
    let model = IdentModel {
        params,
        encoder,
        output_map,
    };
    model.check()?;
    Ok(model)
}

/// Measured vs simulated channels over a record.
pub fn trajectory_csv(data: &Dataset, model: &IdentModel, solver: &SolverConfig<f64>) -> Result<String> {
    let pred = predict(model, data, solver)?;
    let channels = data.n_outputs();
    let mut s = String::from("t");
    for kind in ["y_measured", "y_simulated", "error"] {
        for c in 1..=channels {
            if channels == 1 {
                write!(s, ",{kind}").unwrap();
            } else {
                write!(s, ",{kind}{c}").unwrap();
            }
        }
    }
    s.push('\n');
    for (i, yhat) in pred.outputs.iter().enumerate() {
        let k = pred.start + i;
        let y = &data.outputs[k];
        write!(s, "{}", k as f64 * data.t_s).unwrap();
        for v in y {
            write!(s, ",{v}").unwrap();
        }
        for v in yhat {
            write!(s, ",{v}").unwrap();
        }
        for (a, b) in y.iter().zip(yhat) {
            write!(s, ",{}", a - b).unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

/// One trained model with its data.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub snr_db: Option<f64>,
    pub noise_std: f64,
    /// Noise std relative to the clean port output's std.
    pub relative_noise_std: f64,
    pub test_nrms: f64,
    pub estimate: DcNetParams,
    pub deviation_pct: [f64; 6],
    pub model: IdentModel,
    pub log_csv: String,
    pub trajectory_csv: String,
}

fn effective_workers(workers: usize) -> usize {
    if workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        workers
    }
}

/// Trains a fresh benchmark model on `train_set`. Returns the training
/// settings actually used (seed and workers filled in) and the final state.
/// Training config and starting model that [`fit`] uses for `seed`.
pub fn prepare_fit(
    cfg: &ExperimentConfig,
    outputs: OutputSet,
    train_set: &Dataset,
    seed: u64,
    workers: usize,
) -> Result<(TrainConfig, IdentModel)> {
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = derive_seed(seed, 20);
    train_cfg.workers = workers;
    let mut init = initial_model(cfg.model, outputs, &train_cfg, derive_seed(seed, 30))?;
    let u_std: Vec<f64> = (0..train_set.n_inputs())
        .map(|c| std_dev(&train_set.inputs.iter().map(|u| u[c]).collect::<Vec<_>>()))
        .collect();
    let y_std: Vec<f64> = (0..train_set.n_outputs())
        .map(|c| std_dev(&train_set.output_channel(c)))
        .collect();
    init.encoder = init.encoder.with_scales(&u_std, &y_std)?;
    Ok((train_cfg, init))
}

pub fn fit(
    cfg: &ExperimentConfig,
    outputs: OutputSet,
    train_set: &Dataset,
    val_set: &Dataset,
    seed: u64,
    workers: usize,
) -> Result<(TrainConfig, crate::ident::TrainState)> {
    let (train_cfg, init) = prepare_fit(cfg, outputs, train_set, seed, workers)?;
    let state = train(train_set, val_set, &init, &train_cfg)?;
    Ok((train_cfg, state))
}

/// Generates data with `data_cfg`, trains, and evaluates on the test set.
pub fn run_once(cfg: &ExperimentConfig, data_cfg: &DataConfig, seed: u64, workers: usize) -> Result<RunResult> {
    let sets = generate_datasets(&cfg.system, data_cfg, derive_seed(seed, 10))?;
    let (train_set, val_set, test_set) = (&sets[0].0, &sets[1].0, &sets[2].0);
    let (train_cfg, state) = fit(cfg, data_cfg.outputs, train_set, val_set, seed, workers)?;
    let best = state.best_model();
    let solver = train_cfg.solver(data_cfg.t_s);
    let test_nrms = evaluate_nrms(&best, test_set, &solver)?;
    let estimate = DcNetParams::from_model(&best.params.assemble());
    let noise_std = test_set.noise.as_ref().map_or(0.0, |n| n.noise_std[0]);
    let clean_std = std_dev(
        &test_set
            .clean_outputs
            .as_ref()
            .expect("generated data keeps clean outputs")
            .iter()
            .map(|y| y[0])
            .collect::<Vec<_>>(),
    );
    Ok(RunResult {
        seed,
        snr_db: data_cfg.snr_db,
        noise_std,
        relative_noise_std: noise_std / clean_std,
        test_nrms,
        deviation_pct: estimate.deviation_pct(&cfg.system),
        estimate,
        log_csv: state.log_csv(),
        trajectory_csv: trajectory_csv(test_set, &best, &solver)?,
        model: best,
    })
}

/// Runs jobs concurrently when more than one worker is available, keeping
/// results in job order.
fn run_all<J: Sync, F>(jobs: &[J], workers: usize, f: F) -> Result<Vec<RunResult>>
where
    F: Fn(&J, usize) -> Result<RunResult> + Sync,
{
    let workers = effective_workers(workers);
    if workers <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(|j| f(j, workers)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(|j| f(j, 1)).collect())
}

/// Test NRMS against measurement noise level.
#[derive(Debug, Clone)]
pub struct Table1Report {
    pub runs: Vec<RunResult>,
}

impl Table1Report {
    pub fn csv(&self) -> String {
        let mut s = String::from("snr_db,noise_std,nrms\n");
        for r in &self.runs {
            writeln!(
                s,
                "{},{:.6},{:.6}",
                r.snr_db.map_or("inf".to_string(), |v| v.to_string()),
                r.relative_noise_std,
                r.test_nrms
            )
            .unwrap();
        }
        s
    }
}

pub fn run_table1(cfg: &ExperimentConfig) -> Result<Table1Report> {
    cfg.validate()?;
    let jobs: Vec<(usize, f64)> = cfg.bench.table1_snr_db.iter().copied().enumerate().collect();
    let runs = run_all(&jobs, cfg.workers, |&(i, snr), workers| {
        let data_cfg = DataConfig {
            snr_db: Some(snr),
            ..cfg.data.clone()
        };
        let r = run_once(cfg, &data_cfg, derive_seed(cfg.seed, 1000 + i as u64), workers)?;
        info!("SNR {snr} dB: test NRMS {:.4}", r.test_nrms);
        Ok(r)
    })?;
    Ok(Table1Report { runs })
}

/// Per-run component estimates and their deviations from the truth.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub truth: DcNetParams,
    pub runs: Vec<RunResult>,
}

impl RecoveryReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("run,parameter,estimate,deviation_pct\n");
        for (i, r) in self.runs.iter().enumerate() {
            for ((name, est), dev) in PARAMETER_NAMES
                .iter()
                .zip(r.estimate.values())
                .zip(r.deviation_pct)
            {
                writeln!(s, "{},{name},{est},{dev}", i + 1).unwrap();
            }
        }
        s
    }

    /// Five-number summary per parameter (boxplot input).
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("parameter,min,q1,median,q3,max\n");
        for (p, name) in PARAMETER_NAMES.iter().enumerate() {
            let mut devs: Vec<f64> = self.runs.iter().map(|r| r.deviation_pct[p]).collect();
            devs.sort_by(f64::total_cmp);
            let q = |f: f64| quantile(&devs, f);
            writeln!(
                s,
                "{name},{},{},{},{},{}",
                q(0.0),
                q(0.25),
                q(0.5),
                q(0.75),
                q(1.0)
            )
            .unwrap();
        }
        s
    }

    pub fn median_deviation_pct(&self) -> f64 {
        let mut all: Vec<f64> = self.runs.iter().flat_map(|r| r.deviation_pct).collect();
        all.sort_by(f64::total_cmp);
        quantile(&all, 0.5)
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], f: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = f * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn run_param_recovery(cfg: &ExperimentConfig) -> Result<RecoveryReport> {
    cfg.validate()?;
    let data_cfg = DataConfig {
        snr_db: Some(cfg.bench.recovery_snr_db),
        outputs: OutputSet::PortAndVoltages,
        ..cfg.data.clone()
    };
    let jobs: Vec<u64> = (0..cfg.bench.recovery_runs as u64).collect();
    let runs = run_all(&jobs, cfg.workers, |&i, workers| {
        let r = run_once(cfg, &data_cfg, derive_seed(cfg.seed, 2000 + i), workers)?;
        info!(
            "recovery run {}: max deviation {:.4}%",
            i + 1,
            r.deviation_pct.iter().fold(0.0f64, |a, &b| a.max(b))
        );
        Ok(r)
    })?;
    Ok(RecoveryReport {
        truth: cfg.system,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::simulate;

    #[test]
    fn nominal_matrices() {
        let (model, params) = build_dc_network(&DcNetParams::nominal()).unwrap();
        assert_eq!(model.e, Matrix::diag(&[2.0, 0.01, 0.02, 0.0, 0.0]));
        assert_eq!(model.r, Matrix::diag(&[1.0, 0.0, 0.0, 6.0, 3.0]));
        assert_eq!(model.j[(0, 1)], -1.0);
        assert_eq!(model.j[(1, 0)], 1.0);
        assert_eq!(model.j, model.j.transpose().scale(-1.0));
        assert_eq!(params.n_free(), 6);
        let assembled = params.assemble();
        assert!(assembled.e.max_abs_diff(&model.e) < 1e-15);
        assert!(assembled.r.max_abs_diff(&model.r) < 1e-15);
        assert_eq!(assembled.j, model.j);
        assert_eq!(model.algebraic_rows(), vec![3, 4]);
    }

    #[test]
    fn invalid_components_rejected() {
        let p = DcNetParams {
            c1: 0.0,
            ..DcNetParams::nominal()
        };
        assert!(matches!(build_dc_network(&p), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn hamiltonian_values() {
        let (model, _) = build_dc_network(&DcNetParams::nominal()).unwrap();
        assert!((model.hamiltonian(&[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((model.hamiltonian(&[0.0, 1.0, 1.0, 0.0, 0.0]).unwrap() - 0.015).abs() < 1e-15);
        assert!((model.hamiltonian(&[1.0, 1.0, 1.0, 0.0, 0.0]).unwrap() - 1.015).abs() < 1e-15);
    }

    #[test]
    fn port_output_is_generator_current() {
        let (model, _) = build_dc_network(&DcNetParams::nominal()).unwrap();
        assert_eq!(model.output(&[0.0, 0.0, 0.0, 0.1, 0.0], None).unwrap(), vec![0.1]);
    }

    #[test]
    fn consistent_initial_states() {
        let (model, _) = build_dc_network(&DcNetParams::nominal()).unwrap();
        let x = consistent_initialize(&model, &[0.0, 1.0, 0.0], &[0.0]).unwrap();
        assert!((x[3] - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(x[4], 0.0);
        let x = consistent_initialize(&model, &[0.0, 0.0, 3.0], &[0.0]).unwrap();
        assert!((x[4] - 1.0).abs() < 1e-15);
        assert_eq!(x[3], 0.0);
        let x = consistent_initialize(&model, &[0.0, 0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(x, vec![0.0; 5]);
    }

    #[test]
    fn steady_state_under_unit_input() {
        let (model, _) = build_dc_network(&DcNetParams::nominal()).unwrap();
        let traj = simulate(&model, &[0.0; 5], &vec![vec![1.0]; 2001], &SolverConfig::new(0.005)).unwrap();
        let last = traj.states.last().unwrap();
        for (a, b) in last.iter().zip([0.1, -0.4, -0.3, 0.1, -0.1]) {
            assert!((a - b).abs() < 1e-6, "{last:?}");
        }
    }

    #[test]
    fn residual_jacobian_factorizes() {
        let (model, _) = build_dc_network(&DcNetParams::nominal()).unwrap();
        let s = StepSolver::new(&model, SolverConfig::new(0.005)).unwrap();
        let u = s.factors().u();
        assert!((0..5).all(|i| u[(i, i)].abs() > 1e-3));
    }

    #[test]
    fn small_dataset_is_reproducible() {
        let cfg = DataConfig {
            n_samples: 400,
            outputs: OutputSet::PortAndVoltages,
            ..DataConfig::default()
        };
        let a = generate_datasets(&DcNetParams::nominal(), &cfg, 5).unwrap();
        let b = generate_datasets(&DcNetParams::nominal(), &cfg, 5).unwrap();
        assert_eq!(a.len(), 3);
        for ((da, ma), (db, mb)) in a.iter().zip(&b) {
            assert_eq!(da, db);
            assert_eq!(ma, mb);
            assert_eq!(da.len(), 400);
            assert_eq!(da.n_outputs(), 3);
        }
        assert_ne!(a[0].0.inputs, a[1].0.inputs);
        assert_ne!(a[0].1.initial_state, a[1].1.initial_state);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
    }

    #[test]
    fn initial_model_has_six_free_parameters() {
        let m = initial_model(ModelStructure::DcMasked, OutputSet::Port, &TrainConfig::default(), 1).unwrap();
        assert_eq!(m.params.n_free(), 6);
        assert!(m.params.flatten().iter().all(|v| (0.5..=1.5).contains(v)));
        assert_eq!(m.encoder.weight.shape(), (5, 11));
        let f = initial_model(ModelStructure::Free, OutputSet::PortAndVoltages, &TrainConfig::default(), 1).unwrap();
        assert_eq!(f.params.n_free(), 10 + 15 + 15);
        assert_eq!(f.encoder.n_outputs, 3);
    }
}
