//! JSON run configurations. Every command reads an optional `--config` file (unknown keys
//! are rejected) and then applies its command-line flags on top.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use reflow_core::data::{BurgersSpec, PowerLawFieldSpec};
use reflow_core::sampler::{ControllerConfig, IntegratorSpec, Scheme};
use reflow_core::transport::{CouplingKind, TrainConfig};

use crate::error::{CliError, CliResult};

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(p) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(p).map_err(|e| CliError::config(format!("config {}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", p.display())))
}

pub fn require_seed(seed: Option<u64>) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::config("a seed is required (--seed or \"seed\" in the config)"))
}

pub fn require_path(p: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    p.clone().ok_or_else(|| CliError::config(format!("{what} path is required")))
}

/// `euler-16`, `rk2-16`, `rk4-16`, `midpoint-32` (the number is the NFE budget for
/// midpoint, the step count otherwise) or `adaptive`.
pub fn parse_integrator(label: &str, controller: &ControllerConfig) -> CliResult<IntegratorSpec> {
    if label == "adaptive" {
        return Ok(IntegratorSpec::Adaptive(controller.clone()));
    }
    let (name, n) = label
        .rsplit_once('-')
        .ok_or_else(|| CliError::config(format!("unknown integrator '{label}'")))?;
    let n: usize = n
        .parse()
        .map_err(|_| CliError::config(format!("bad step count in '{label}'")))?;
    let scheme = match name {
        "euler" => Scheme::Euler,
        "rk2" => Scheme::Rk2,
        "rk4" => Scheme::Rk4,
        "midpoint" => Scheme::Midpoint,
        _ => return Err(CliError::config(format!("unknown integrator '{label}'"))),
    };
    let steps = if scheme == Scheme::Midpoint { n / 2 } else { n };
    if steps == 0 {
        return Err(CliError::config(format!("step count too small in '{label}'")));
    }
    Ok(IntegratorSpec::fixed(scheme, steps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    /// 1D Gaussian-to-Gaussian coupling.
    Gaussian,
    /// Samples of the bimodal 1D mixture (source: standard normal).
    Mixture,
    /// Conditional linear-Gaussian pairs.
    LinearGaussian,
    /// Power-law random field ensemble.
    PowerLaw,
    /// Viscous Burgers training pairs plus a macro–micro test set.
    Burgers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianParams {
    pub m0: f64,
    pub s0: f64,
    pub m1: f64,
    pub s1: f64,
    pub coupling: CouplingKind,
}

impl Default for GaussianParams {
    fn default() -> Self {
        Self {
            m0: 0.0,
            s0: 1.0,
            m1: 2.0,
            s1: 0.5,
            coupling: CouplingKind::Independent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub kind: DataKind,
    pub n: usize,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub gaussian: GaussianParams,
    pub power_law: Option<PowerLawFieldSpec>,
    pub burgers: BurgersSpec,
    pub n_macro: usize,
    pub n_micro: usize,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Gaussian,
            n: 1024,
            seed: None,
            out: None,
            gaussian: GaussianParams::default(),
            power_law: None,
            burgers: BurgersSpec::default(),
            n_macro: 10,
            n_micro: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub seed: Option<u64>,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            hidden: vec![64, 64],
            train: TrainConfig::default(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub model: Option<PathBuf>,
    /// Conditions are taken from this dataset when the model is conditional.
    pub data: Option<PathBuf>,
    pub n: usize,
    pub integrator: String,
    pub controller: ControllerConfig,
    pub sigma0: f64,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            model: None,
            data: None,
            n: 256,
            integrator: "adaptive".into(),
            controller: ControllerConfig::default(),
            sigma0: 1.0,
            seed: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub integrator: String,
    pub controller: ControllerConfig,
    pub sigma0: f64,
    pub directions: usize,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            data: None,
            model: None,
            integrator: "adaptive".into(),
            controller: ControllerConfig::default(),
            sigma0: 1.0,
            directions: 128,
            seed: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    /// Exact velocity of the bimodal 1D mixture (curved paths).
    Mixture,
    /// Comonotone 1D Gaussian transport (straight paths).
    Gaussian,
    /// Conditional linear-Gaussian problem.
    LinearGaussian,
    /// Independent-coupling Gaussian field on a 16-point torus.
    Field,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub benchmark: Benchmark,
    /// Optional checkpoint replacing the benchmark's analytic velocity.
    pub model: Option<PathBuf>,
    pub samples: usize,
    /// RK4 steps of the reference solution each method is scored against.
    pub reference_steps: usize,
    pub controller: ControllerConfig,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            benchmark: Benchmark::Mixture,
            model: None,
            samples: 256,
            reference_steps: 512,
            controller: ControllerConfig::default(),
            seed: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub lte_slope: (f64, f64),
    pub lte_ratio_tol: f64,
    pub global_slope: (f64, f64),
    /// Monte Carlo trials per perturbation construction.
    pub trials: usize,
    pub trial_samples: usize,
    pub chebyshev_sigmas: f64,
    pub terminal_slack: f64,
    pub master_steps: usize,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            lte_slope: (1.95, 2.05),
            lte_ratio_tol: 1e-3,
            global_slope: (0.95, 1.05),
            trials: 20,
            trial_samples: 64,
            chebyshev_sigmas: 2.0,
            terminal_slack: 1e-9,
            master_steps: 8,
            seed: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    /// Log–log line plot of a two-column CSV (e.g. `k,energy`).
    Spectrum,
    /// NFE–error scatter from a bench table CSV.
    Scatter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    pub input: Option<PathBuf>,
    pub kind: PlotKind,
    pub title: String,
    pub out: Option<PathBuf>,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            input: None,
            kind: PlotKind::Spectrum,
            title: String::new(),
            out: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrator_labels() {
        let c = ControllerConfig::default();
        assert_eq!(parse_integrator("euler-16", &c).unwrap(), IntegratorSpec::fixed(Scheme::Euler, 16));
        assert_eq!(parse_integrator("midpoint-32", &c).unwrap(), IntegratorSpec::fixed(Scheme::Midpoint, 16));
        assert!(matches!(parse_integrator("adaptive", &c).unwrap(), IntegratorSpec::Adaptive(_)));
        for bad in ["heun-4", "euler", "euler-x", "euler-0", "midpoint-1"] {
            assert_eq!(parse_integrator(bad, &c).unwrap_err().code, crate::error::EXIT_CONFIG);
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"samples": 4, "bogus": 1}"#).unwrap();
        assert_eq!(load::<BenchConfig>(Some(&p)).unwrap_err().code, crate::error::EXIT_CONFIG);
        fs::write(&p, r#"{"samples": 4, "controller": {"lambda": 0.25}}"#).unwrap();
        let c: BenchConfig = load(Some(&p)).unwrap();
        assert_eq!(c.samples, 4);
        assert_eq!(c.controller.lambda, 0.25);
        assert_eq!(c.controller.dtau_max, 0.125);
    }
}
