use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};
use serde::Serialize;

use phdae::bench::{self, DatasetManifest, OutputSet, SPLITS};
use phdae::ident::{evaluate_nrms, nrms, IdentModel, ModelFile};
use phdae::rng::derive_seed;
use phdae::{Dataset, Error, ExperimentConfig};

#[derive(Parser)]
#[command(name = "phdae", version, about = "Identify port-Hamiltonian DAE models from data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides the config worker count (0: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output on stderr; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the DC network and write train/val/test CSVs plus a manifest.
    Generate,
    /// Fit a model to train.csv, selecting on val.csv.
    Train {
        /// Directory holding train.csv and val.csv.
        #[arg(long)]
        data: PathBuf,
    },
    /// Free-run simulation NRMS of a model on a dataset.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Predict each channel's mean instead of simulating a model.
        #[arg(long)]
        mean_baseline: bool,
    },
    /// Reproduce a benchmark experiment.
    Bench {
        #[arg(value_enum)]
        which: Benchmark,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Benchmark {
    Table1,
    Recovery,
}

/// Failure categories mapped to exit codes.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::Json(_) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e),
        }
    }
}

#[derive(Serialize)]
struct GenerateManifest<'a> {
    seed: u64,
    config: &'a ExperimentConfig,
    datasets: Vec<DatasetManifest>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            error!("{msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            error!("{e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)
                .map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.train.workers = cfg.workers;
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Runtime(Error::Io {
        path: path.display().to_string(),
        source: e,
    }))
}

fn json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.into()))?;
    s.push('\n');
    Ok(s)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    fs::create_dir_all(&cli.out).map_err(|e| Failure::Runtime(Error::Io {
        path: cli.out.display().to_string(),
        source: e,
    }))?;
    match &cli.command {
        Command::Generate => generate(cli, &cfg),
        Command::Train { data } => train(cli, &cfg, data),
        Command::Eval {
            model,
            data,
            mean_baseline,
        } => eval(cli, &cfg, model.as_deref(), data, *mean_baseline),
        Command::Bench { which } => bench_cmd(cli, &cfg, *which),
    }
}

fn generate(cli: &Cli, cfg: &ExperimentConfig) -> Result<(), Failure> {
    let sets = bench::generate_datasets(&cfg.system, &cfg.data, derive_seed(cfg.seed, 10))?;
    let mut manifests = Vec::new();
    for (data, manifest) in sets {
        let path = cli.out.join(format!("{}.csv", manifest.name));
        data.write_csv(&path)?;
        info!("wrote {} ({} samples)", path.display(), data.len());
        manifests.push(manifest);
    }
    let manifest = GenerateManifest {
        seed: cfg.seed,
        config: cfg,
        datasets: manifests,
    };
    write(&cli.out.join("manifest.json"), &json(&manifest)?)
}

fn output_set(data: &Dataset) -> Result<OutputSet, Failure> {
    match data.n_outputs() {
        1 => Ok(OutputSet::Port),
        3 => Ok(OutputSet::PortAndVoltages),
        k => Err(Failure::Usage(format!(
            "dataset has {k} output channels; expected 1 (I_G) or 3 (I_G, V1, V2)"
        ))),
    }
}

fn train(cli: &Cli, cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    let train_set = Dataset::read_csv(dir.join(SPLITS[0]).with_extension("csv"))?;
    let val_set = Dataset::read_csv(dir.join(SPLITS[1]).with_extension("csv"))?;
    let outputs = output_set(&train_set)?;
    let (train_cfg, state) = bench::fit(cfg, outputs, &train_set, &val_set, cfg.seed, cfg.workers)?;
    let best = state.best_model();
    let train_nrms = evaluate_nrms(&best, &train_set, &train_cfg.solver(train_set.t_s))?;
    info!(
        "best epoch {}: val NRMS {:.6}, train NRMS {train_nrms:.6}",
        state.best.epoch, state.best.val_nrms
    );
    write(&cli.out.join("model.json"), &json(&best.to_file())?)?;
    write(&cli.out.join("train_log.csv"), &state.log_csv())?;
    println!("train_nrms={train_nrms}");
    println!("val_nrms={}", state.best.val_nrms);
    Ok(())
}

fn eval(
    cli: &Cli,
    cfg: &ExperimentConfig,
    model: Option<&Path>,
    data_path: &Path,
    mean_baseline: bool,
) -> Result<(), Failure> {
    let data = Dataset::read_csv(data_path)?;
    if mean_baseline {
        let channels = data.n_outputs();
        let means: Vec<f64> = (0..channels)
            .map(|c| phdae::signals::mean(&data.output_channel(c)))
            .collect();
        let predicted = vec![means; data.len()];
        println!("nrms={}", nrms(&data.outputs, &predicted)?);
        return Ok(());
    }
    let Some(model_path) = model else {
        return Err(Failure::Usage("eval needs --model or --mean-baseline".into()));
    };
    let text = fs::read_to_string(model_path).map_err(|e| {
        Failure::Runtime(Error::Io {
            path: model_path.display().to_string(),
            source: e,
        })
    })?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| Failure::Runtime(e.into()))?;
    let model = IdentModel::from_file(file)?;
    let solver = cfg.train.solver(data.t_s);
    let value = evaluate_nrms(&model, &data, &solver)?;
    write(
        &cli.out.join("trajectory.csv"),
        &bench::trajectory_csv(&data, &model, &solver)?,
    )?;
    println!("nrms={value}");
    Ok(())
}

fn bench_cmd(cli: &Cli, cfg: &ExperimentConfig, which: Benchmark) -> Result<(), Failure> {
    match which {
        Benchmark::Table1 => {
            let report = bench::run_table1(cfg)?;
            for r in &report.runs {
                let snr = r.snr_db.unwrap_or(f64::INFINITY);
                write(
                    &cli.out.join(format!("trajectory_snr{snr}.csv")),
                    &r.trajectory_csv,
                )?;
                write(&cli.out.join(format!("train_log_snr{snr}.csv")), &r.log_csv)?;
                println!("snr_db={snr} nrms={}", r.test_nrms);
            }
            write(&cli.out.join("table1.csv"), &report.csv())?;
        }
        Benchmark::Recovery => {
            let report = bench::run_param_recovery(cfg)?;
            for (i, r) in report.runs.iter().enumerate() {
                write(&cli.out.join(format!("train_log_run{}.csv", i + 1)), &r.log_csv)?;
            }
            write(&cli.out.join("param_recovery.csv"), &report.csv())?;
            write(&cli.out.join("param_recovery_summary.csv"), &report.summary_csv())?;
            let max = report
                .runs
                .iter()
                .flat_map(|r| r.deviation_pct)
                .fold(0.0f64, f64::max);
            println!("median_deviation_pct={}", report.median_deviation_pct());
            println!("max_deviation_pct={max}");
        }
    }
    Ok(())
}
