//! Excitation signals, measurement noise and the CSV dataset format.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sum of harmonically related unit sines with given phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultisineSpec {
    /// Base frequency in Hz.
    pub f0: f64,
    /// One phase per harmonic, in `[0, 2π)`.
    pub phases: Vec<f64>,
    #[serde(default = "unit")]
    pub amplitude: f64,
}

fn unit() -> f64 {
    1.0
}

impl MultisineSpec {
    pub fn new(f0: f64, phases: Vec<f64>) -> Result<Self> {
        if let Some(p) = phases.iter().find(|p| !(0.0..2.0 * PI).contains(*p)) {
            return Err(Error::InvalidParameter(format!("phase {p} outside [0, 2π)")));
        }
        if !(f0 > 0.0) {
            return Err(Error::InvalidParameter(format!("base frequency {f0} must be positive")));
        }
        Ok(Self {
            f0,
            phases,
            amplitude: 1.0,
        })
    }

    /// Phases drawn uniformly from `[0, 2π)`.
    pub fn random<R: Rng + ?Sized>(f0: f64, n_sines: usize, rng: &mut R) -> Self {
        let phases = (0..n_sines).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Self {
            f0,
            phases,
            amplitude: 1.0,
        }
    }

    pub fn n_sines(&self) -> usize {
        self.phases.len()
    }

    pub fn period(&self) -> f64 {
        1.0 / self.f0
    }
}

/// `u(t) = Σ_i a · sin(2π i f0 t + φ_i)`, harmonics numbered from 1.
pub fn multisine(spec: &MultisineSpec, t: f64) -> f64 {
    spec.phases
        .iter()
        .enumerate()
        .map(|(i, &phi)| (2.0 * PI * (i + 1) as f64 * spec.f0 * t + phi).sin())
        .sum::<f64>()
        * spec.amplitude
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Adds white Gaussian noise with std `σ_y · 10^(−snr/20)`, where `σ_y` is
/// the population std of `signal`. An infinite SNR leaves the signal
/// untouched. Returns the noisy signal and the noise std.
pub fn add_noise<R: Rng + ?Sized>(signal: &[f64], snr_db: f64, rng: &mut R) -> Result<(Vec<f64>, f64)> {
    if snr_db == f64::INFINITY {
        return Ok((signal.to_vec(), 0.0));
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidParameter("SNR is NaN".into()));
    }
    let sigma = std_dev(signal);
    if !(sigma > 0.0) {
        return Err(Error::DegenerateSignal(
            "cannot set an SNR on a constant signal".into(),
        ));
    }
    let noise_std = sigma * 10f64.powf(-snr_db / 20.0);
    let normal = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let noisy = signal.iter().map(|&s| s + normal.sample(rng)).collect();
    Ok((noisy, noise_std))
}

/// How a dataset's measurement noise was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseInfo {
    /// `None` for noiseless data.
    pub snr_db: Option<f64>,
    /// Per output channel.
    pub noise_std: Vec<f64>,
    pub seed: u64,
}

/// Uniformly sampled input/output record.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Sampling period in seconds.
    pub t_s: f64,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    /// Noise-free outputs, kept for diagnostics.
    pub clean_outputs: Option<Vec<Vec<f64>>>,
    pub noise: Option<NoiseInfo>,
}

impl Dataset {
    pub fn new(t_s: f64, inputs: Vec<Vec<f64>>, outputs: Vec<Vec<f64>>) -> Result<Self> {
        let d = Self {
            t_s,
            inputs,
            outputs,
            clean_outputs: None,
            noise: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_s > 0.0) {
            return Err(Error::InvalidParameter(format!("sampling period {}", self.t_s)));
        }
        if self.inputs.len() != self.outputs.len() {
            return Err(Error::dims(format!(
                "{} input samples but {} output samples",
                self.inputs.len(),
                self.outputs.len()
            )));
        }
        let (mu, my) = (self.n_inputs(), self.n_outputs());
        if self.inputs.iter().any(|u| u.len() != mu) || self.outputs.iter().any(|y| y.len() != my)
        {
            return Err(Error::dims("ragged samples"));
        }
        if let Some(c) = &self.clean_outputs {
            if c.len() != self.outputs.len() || c.iter().any(|y| y.len() != my) {
                return Err(Error::dims("clean outputs do not match outputs"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.first().map_or(0, Vec::len)
    }

    /// One output channel as a column.
    pub fn output_channel(&self, c: usize) -> Vec<f64> {
        self.outputs.iter().map(|y| y[c]).collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n_inputs()).map(|i| format!("u{i}")));
        header.extend((1..=self.n_outputs()).map(|i| format!("y{i}")));
        if self.clean_outputs.is_some() {
            header.extend((1..=self.n_outputs()).map(|i| format!("y_clean{i}")));
        }
        s.push_str(&header.join(","));
        s.push('\n');
        for k in 0..self.len() {
            // `Display` for f64 is the shortest string that parses back to
            // the same value.
            write!(s, "{}", k as f64 * self.t_s).unwrap();
            for v in &self.inputs[k] {
                write!(s, ",{v}").unwrap();
            }
            for v in &self.outputs[k] {
                write!(s, ",{v}").unwrap();
            }
            if let Some(c) = &self.clean_outputs {
                for v in &c[k] {
                    write!(s, ",{v}").unwrap();
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = rdr
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let names: Vec<&str> = header.iter().collect();
        if names.first() != Some(&"t") {
            return Err(Error::Parse {
                line: 1,
                message: "first column must be `t`".into(),
            });
        }
        let count = |prefix: &str| {
            names
                .iter()
                .filter(|n| {
                    n.strip_prefix(prefix)
                        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
                })
                .count()
        };
        let (mu, my, mc) = (count("u"), count("y"), count("y_clean"));
        if 1 + mu + my + mc != names.len() || (mc != 0 && mc != my) {
            return Err(Error::Parse {
                line: 1,
                message: format!("unrecognized header `{}`", names.join(",")),
            });
        }
        let mut times = Vec::new();
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let mut clean = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            if rec.len() != names.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} columns, found {}", names.len(), rec.len()),
                });
            }
            let vals = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("invalid number `{f}`"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            times.push(vals[0]);
            inputs.push(vals[1..1 + mu].to_vec());
            outputs.push(vals[1 + mu..1 + mu + my].to_vec());
            if mc > 0 {
                clean.push(vals[1 + mu + my..].to_vec());
            }
        }
        if times.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "{} data rows, at least 2 are needed to recover the sampling period",
                times.len()
            )));
        }
        let d = Self {
            t_s: times[1] - times[0],
            inputs,
            outputs,
            clean_outputs: (mc > 0).then_some(clean),
            noise: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }
}
