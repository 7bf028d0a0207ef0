//! Command-line flags and their conversion into a [`RunConfig`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{parse_kernel, CommandName, ConfigFile, Overrides, RunConfig};
use crate::table::Format;
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "qnoise", version, about = "Weak-measurement noise correlators")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Primary output file; the manifest goes to `<output>.manifest.json`.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads (default 1).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Squeezing scan of the AC-driven junction.
    ///
    /// CSV: z, emission, sym_abs, re_sq (units of 2πGΩt0), violated (0/1).
    /// Also writes `<output>.summary.json` with {z_lo, z_hi}.
    Fig1(Fig1Args),
    /// Weak line spectrum of a thermal system.
    ///
    /// CSV: omega, weight_re, weight_im.
    Spectrum(SpectrumArgs),
    /// Detailed-balance residuals for every pair of named observables.
    ///
    /// CSV: a, b, omega, residual_re, residual_im, residual_abs. Exit 2 if
    /// any residual reaches 1e-12.
    FdtCheck(FdtArgs),
    /// P, Q and Wigner moments of an oscillator state.
    ///
    /// CSV: state, n, k, ordering, moment_re, moment_im.
    Pfunction(PfunctionArgs),
    /// Equal-time variance of the driven two-level example.
    ///
    /// CSV: omega_tinf, variance, asymptote, negative (0/1).
    TlsVariance(TlsVarianceArgs),
    /// Finite-η correlator against its weak limit.
    ///
    /// CSV: eta, estimate, stderr, weak_reference, bias, exact. The bias is
    /// estimate - weak_reference; exact is the grid-integrated value.
    PovmConverge(PovmArgs),
    /// Memory kernel calibration from the no-information conditions.
    ///
    /// CSV: omega, T, im_f, iterations, residual.
    CalibrateKernel(CalibrationArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct Fig1Args {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Junction temperature in units of Ω.
    #[arg(long = "T", allow_hyphen_values = true)]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SpectrumArgs {
    /// tls, oscillator or custom.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[arg(long = "T", allow_hyphen_values = true)]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Detector temperature (defaults to T).
    #[arg(long = "Td")]
    #[serde(rename = "Td", skip_serializing_if = "Option::is_none")]
    pub td: Option<f64>,
    /// Kernel sign: 1 emission, -1 absorption.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sign: Option<i32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// sx, sy, sz for tls; x, p for oscillator.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<String>,
    /// Hamiltonian as a JSON matrix of [re, im] pairs.
    #[arg(long)]
    #[serde(skip)]
    pub h_matrix: Option<String>,
    #[arg(long)]
    #[serde(skip)]
    pub a_matrix: Option<String>,
    #[arg(long)]
    #[serde(skip)]
    pub b_matrix: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct FdtArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[arg(long = "T", allow_hyphen_values = true)]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct PfunctionArgs {
    /// coherent, thermal or squeezed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_re: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_im: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nbar: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_order: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TlsVarianceArgs {
    /// Memory cutoff Ω·t_inf.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_tinf: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct PovmArgs {
    /// `markovian`, `zero-temperature` or a kernel JSON object.
    #[arg(long)]
    #[serde(skip)]
    pub kernel: Option<String>,
    /// Comma-separated detector strengths.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub etas: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lead: Option<f64>,
    /// Trajectory records per η written to `<output>.trajectories.ndjson`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrationArgs {
    /// Comma-separated level spacings.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<f64>>,
    /// Comma-separated temperatures.
    #[arg(long = "T", value_delimiter = ',')]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
}

fn to_map<T: Serialize>(args: &T) -> Result<Map<String, Value>, CliError> {
    match serde_json::to_value(args)? {
        Value::Object(m) => Ok(m),
        _ => unreachable!("argument structs serialize to objects"),
    }
}

fn insert_json(map: &mut Map<String, Value>, key: &str, text: &Option<String>) -> Result<(), CliError> {
    if let Some(t) = text {
        let v = serde_json::from_str(t).map_err(|e| CliError::Config(format!("--{}: {e}", key.replace('_', "-"))))?;
        map.insert(key.to_string(), v);
    }
    Ok(())
}

impl Command {
    pub fn name(&self) -> CommandName {
        match self {
            Command::Fig1(_) => CommandName::Fig1,
            Command::Spectrum(_) => CommandName::Spectrum,
            Command::FdtCheck(_) => CommandName::FdtCheck,
            Command::Pfunction(_) => CommandName::Pfunction,
            Command::TlsVariance(_) => CommandName::TlsVariance,
            Command::PovmConverge(_) => CommandName::PovmConverge,
            Command::CalibrateKernel(_) => CommandName::CalibrateKernel,
        }
    }

    /// Parameter overrides keyed like the config file.
    pub fn params(&self) -> Result<Map<String, Value>, CliError> {
        match self {
            Command::Fig1(a) => to_map(a),
            Command::Spectrum(a) => {
                let mut m = to_map(a)?;
                insert_json(&mut m, "h_matrix", &a.h_matrix)?;
                insert_json(&mut m, "a_matrix", &a.a_matrix)?;
                insert_json(&mut m, "b_matrix", &a.b_matrix)?;
                Ok(m)
            }
            Command::FdtCheck(a) => to_map(a),
            Command::Pfunction(a) => to_map(a),
            Command::TlsVariance(a) => to_map(a),
            Command::PovmConverge(a) => {
                let mut m = to_map(a)?;
                if let Some(k) = &a.kernel {
                    m.insert("kernel".into(), serde_json::to_value(parse_kernel(k)?)?);
                }
                Ok(m)
            }
            Command::CalibrateKernel(a) => to_map(a),
        }
    }
}

impl Cli {
    pub fn into_config(self) -> Result<RunConfig, CliError> {
        let file = match &self.common.config {
            Some(path) => ConfigFile::from_json(&std::fs::read_to_string(path)?)?,
            None => ConfigFile::default(),
        };
        let flags = Overrides {
            output: self.common.output,
            seed: self.common.seed,
            format: self.common.format,
            threads: self.common.threads,
            params: self.command.params()?,
        };
        RunConfig::merge(self.command.name(), file, flags)
    }
}
