//! Run configuration: a JSON file merged with command-line flags.
//!
//! Every level is parsed strictly, so a misspelled key is an error.

use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use qnoise::hilbert::Operator;
use qnoise::kernel::{KernelSign, MemoryKernel};

use crate::table::Format;
use crate::CliError;

pub const DEFAULT_SEED: u64 = 0x5EED_2013;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Fig1,
    Spectrum,
    FdtCheck,
    Pfunction,
    TlsVariance,
    PovmConverge,
    CalibrateKernel,
}

impl CommandName {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandName::Fig1 => "fig1",
            CommandName::Spectrum => "spectrum",
            CommandName::FdtCheck => "fdt-check",
            CommandName::Pfunction => "pfunction",
            CommandName::TlsVariance => "tls-variance",
            CommandName::PovmConverge => "povm-converge",
            CommandName::CalibrateKernel => "calibrate-kernel",
        }
    }
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub command: Option<CommandName>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub format: Option<Format>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Fully merged configuration of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: CommandName,
    pub output: PathBuf,
    pub seed: u64,
    pub format: Format,
    pub threads: usize,
    pub params: Params,
}

/// Top-level values given as flags; `None` defers to the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub format: Option<Format>,
    pub threads: Option<usize>,
    pub params: Map<String, Value>,
}

impl RunConfig {
    /// Merges file and flags (flags win) and parses the command parameters.
    pub fn merge(command: CommandName, file: ConfigFile, flags: Overrides) -> Result<Self, CliError> {
        if let Some(c) = file.command {
            if c != command {
                return Err(CliError::Config(format!(
                    "config file is for `{}`, not `{}`",
                    c.as_str(),
                    command.as_str()
                )));
            }
        }
        let format = flags.format.or(file.format).unwrap_or(Format::Csv);
        let threads = flags.threads.or(file.threads).unwrap_or(1);
        if threads == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        let output = flags
            .output
            .or(file.output)
            .unwrap_or_else(|| PathBuf::from(format!("{}.{}", command.as_str(), format.extension())));
        let mut params = file.params;
        params.extend(flags.params);
        Ok(Self {
            command,
            output,
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            format,
            threads,
            params: Params::parse(command, params)?,
        })
    }

    /// Parses a complete config file on its own, as a fuzzing entry point.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let file = ConfigFile::from_json(text)?;
        let command = file
            .command
            .ok_or_else(|| CliError::Config("missing `command`".into()))?;
        Self::merge(command, file, Overrides::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    Fig1(Fig1Params),
    Spectrum(SpectrumParams),
    FdtCheck(FdtParams),
    Pfunction(PfunctionParams),
    TlsVariance(TlsVarianceParams),
    PovmConverge(PovmParams),
    CalibrateKernel(CalibrationParams),
}

fn strict<T: DeserializeOwned>(command: CommandName, params: Map<String, Value>) -> Result<T, CliError> {
    serde_json::from_value(Value::Object(params)).map_err(|e| CliError::Config(format!("{}: {e}", command.as_str())))
}

impl Params {
    pub fn parse(command: CommandName, params: Map<String, Value>) -> Result<Self, CliError> {
        Ok(match command {
            CommandName::Fig1 => Params::Fig1(strict(command, params)?),
            CommandName::Spectrum => Params::Spectrum(strict(command, params)?),
            CommandName::FdtCheck => Params::FdtCheck(strict(command, params)?),
            CommandName::Pfunction => Params::Pfunction(strict(command, params)?),
            CommandName::TlsVariance => Params::TlsVariance(strict(command, params)?),
            CommandName::PovmConverge => Params::PovmConverge(strict(command, params)?),
            CommandName::CalibrateKernel => Params::CalibrateKernel(strict(command, params)?),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Tls,
    Oscillator,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig1Params {
    #[serde(default = "default_z_max")]
    pub z_max: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(rename = "T", default)]
    pub t: f64,
}

fn default_z_max() -> f64 {
    4.0
}

fn default_steps() -> usize {
    400
}

/// System for spectra: a named model, or explicit operators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumParams {
    #[serde(default = "default_system")]
    pub system: System,
    #[serde(rename = "T", default = "one")]
    pub t: f64,
    /// Detector temperature; defaults to the system temperature.
    #[serde(rename = "Td", default)]
    pub td: Option<f64>,
    #[serde(default = "default_sign")]
    pub sign: KernelSign,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Named observables: sx, sy, sz for the TLS, x, p for the oscillator.
    #[serde(default)]
    pub a: Option<String>,
    #[serde(default)]
    pub b: Option<String>,
    /// Explicit operators for the custom system.
    #[serde(default)]
    pub h_matrix: Option<Operator>,
    #[serde(default)]
    pub a_matrix: Option<Operator>,
    #[serde(default)]
    pub b_matrix: Option<Operator>,
}

fn default_system() -> System {
    System::Tls
}

fn default_sign() -> KernelSign {
    KernelSign::Emission
}

fn default_dim() -> usize {
    32
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdtParams {
    #[serde(default = "default_system")]
    pub system: System,
    #[serde(rename = "T", default = "one")]
    pub t: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Coherent,
    Thermal,
    Squeezed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfunctionParams {
    #[serde(default = "default_state")]
    pub state: StateKind,
    #[serde(default = "one")]
    pub beta_re: f64,
    #[serde(default)]
    pub beta_im: f64,
    #[serde(default = "one")]
    pub nbar: f64,
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_pdim")]
    pub dim: usize,
    #[serde(default = "default_order")]
    pub max_order: usize,
}

fn default_state() -> StateKind {
    StateKind::Squeezed
}

fn default_r() -> f64 {
    0.5
}

fn default_pdim() -> usize {
    64
}

fn default_order() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsVarianceParams {
    #[serde(default = "default_tinf")]
    pub omega_tinf: f64,
}

fn default_tinf() -> f64 {
    100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PovmParams {
    #[serde(default = "default_kernel")]
    pub kernel: MemoryKernel,
    #[serde(default = "default_etas")]
    pub etas: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_lead")]
    pub lead: f64,
    /// Trajectory records per η written as NDJSON next to the table; 0 skips.
    #[serde(default)]
    pub trajectories: usize,
}

fn default_kernel() -> MemoryKernel {
    MemoryKernel::zero_temperature()
}

fn default_etas() -> Vec<f64> {
    vec![0.4, 0.2, 0.1]
}

fn default_samples() -> usize {
    100_000
}

fn default_dt() -> f64 {
    0.05
}

fn default_lead() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationParams {
    #[serde(default = "one_list")]
    pub omega: Vec<f64>,
    #[serde(rename = "T", default = "one_list")]
    pub t: Vec<f64>,
}

fn one_list() -> Vec<f64> {
    vec![1.0]
}

/// Kernel from a flag: a shorthand name or a JSON object.
pub fn parse_kernel(text: &str) -> Result<MemoryKernel, CliError> {
    match text.trim() {
        "markovian" => Ok(MemoryKernel::Markovian),
        "zero-temperature" => Ok(MemoryKernel::zero_temperature()),
        json if json.starts_with('{') => serde_json::from_str(json).map_err(|e| CliError::Config(e.to_string())),
        other => Err(CliError::Config(format!("unknown kernel {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn flags_override_file() {
        let file =
            ConfigFile::from_json(r#"{"command": "fig1", "seed": 3, "params": {"z_max": 2.0, "steps": 10}}"#).unwrap();
        let flags = Overrides {
            seed: Some(9),
            params: obj(json!({"steps": 20})),
            ..Default::default()
        };
        let cfg = RunConfig::merge(CommandName::Fig1, file, flags).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.output, PathBuf::from("fig1.csv"));
        assert_eq!(
            cfg.params,
            Params::Fig1(Fig1Params {
                z_max: 2.0,
                steps: 20,
                t: 0.0
            })
        );
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(ConfigFile::from_json(r#"{"command": "fig1", "sead": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"command": "fig1", "params": {"zmax": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"command": "spectrum", "params": {"Td": 1, "tt": 2}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"command": "bogus"}"#).is_err());
    }

    #[test]
    fn command_mismatch_is_error() {
        let file = ConfigFile::from_json(r#"{"command": "fig1"}"#).unwrap();
        assert!(RunConfig::merge(CommandName::Spectrum, file, Overrides::default()).is_err());
    }

    #[test]
    fn defaults() {
        let cfg = RunConfig::from_json(r#"{"command": "povm-converge"}"#).unwrap();
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.threads, 1);
        match cfg.params {
            Params::PovmConverge(p) => {
                assert_eq!(p.etas, vec![0.4, 0.2, 0.1]);
                assert_eq!(p.kernel, MemoryKernel::zero_temperature());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kernel_flag_forms() {
        assert_eq!(parse_kernel("markovian").unwrap(), MemoryKernel::Markovian);
        let k = parse_kernel(r#"{"variant": "equilibrium", "Td": 0.5, "sign": -1}"#).unwrap();
        assert_eq!(k, MemoryKernel::equilibrium(0.5, KernelSign::Absorption).unwrap());
        assert!(parse_kernel("hot").is_err());
        assert!(parse_kernel(r#"{"variant": "equilibrium", "Td": -1}"#).is_err());
    }
}
