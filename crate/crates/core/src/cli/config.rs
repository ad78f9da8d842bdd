//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certificate::{CertificateKind, GridSpec};
use crate::cpgd::CpgdConfig;
use crate::error::{Error, Result};
use crate::kernels::{FidelitySpec, KernelConfig, MixingKernelSpec};
use crate::measures::DiscreteMeasure;
use crate::metrics::rate_quantities;
use crate::sfw::SfwConfig;

/// Relative tolerance for the `1/tau = 4m` cross-check when both are given.
const BANDWIDTH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KappaSpec {
    Value(f64),
    Rule(KappaRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaRule {
    /// `kappa_factor * rho_n / C_m`.
    Auto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    /// Defaults to the experiment bandwidth.
    #[serde(default)]
    pub m: Option<f64>,
    /// Defaults to the truth support.
    #[serde(default)]
    pub support: Option<Vec<Vec<f64>>>,
    #[serde(default = "full")]
    pub kind: CertificateKind,
    /// Defaults to the support box widened by `20 / m` with 10001 points (d = 1) or 201 per axis.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "unit")]
    pub admissibility_constant: f64,
}

fn full() -> CertificateKind {
    CertificateKind::Full
}

fn unit() -> f64 {
    1.0
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            m: None,
            support: None,
            kind: CertificateKind::Full,
            grid: None,
            epsilon: None,
            admissibility_constant: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    #[serde(default)]
    pub seed_offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub truth: DiscreteMeasure,
    pub mixing: KernelConfig,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub m: Option<f64>,
    pub kappa: KappaSpec,
    #[serde(default = "unit")]
    pub kappa_factor: f64,
    #[serde(default)]
    pub n: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Replace sample averages by exact population moments of the truth.
    #[serde(default)]
    pub exact_moments: bool,
    #[serde(default = "default_quad")]
    pub quad_points_per_dim: usize,
    /// Directory holding `sample_seed<k>.csv` files; samples are simulated inline when absent.
    #[serde(default)]
    pub samples_from: Option<PathBuf>,
    #[serde(default)]
    pub sfw: SfwConfig,
    #[serde(default)]
    pub cpgd: CpgdConfig,
    #[serde(default)]
    pub certificate: CertifyConfig,
    #[serde(default)]
    pub rates: Option<RatesConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_quad() -> usize {
    64
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mixing = self.mixing_spec()?;
        if mixing.dim() != self.truth.dim() {
            return Err(Error::Config(format!(
                "mixing dimension {} differs from truth dimension {}",
                mixing.dim(),
                self.truth.dim()
            )));
        }
        self.bandwidth()?;
        match &self.kappa {
            KappaSpec::Value(k) if !(*k > 0.0 && k.is_finite()) => {
                return Err(Error::Config(format!("kappa must be positive, got {k}")));
            }
            KappaSpec::Rule(KappaRule::Auto) if self.m.is_none() => {
                return Err(Error::Config("kappa \"auto\" requires m".into()));
            }
            _ => {}
        }
        if !(self.kappa_factor > 0.0) {
            return Err(Error::Config("kappa_factor must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.quad_points_per_dim < 8 {
            return Err(Error::Config("quad_points_per_dim must be at least 8".into()));
        }
        Ok(())
    }

    pub fn mixing_spec(&self) -> Result<MixingKernelSpec> {
        MixingKernelSpec::from_config(&self.mixing).map_err(|e| Error::Config(e.to_string()))
    }

    /// `(tau, m)` with `1/tau = 4m`.
    pub fn bandwidth(&self) -> Result<(f64, f64)> {
        match (self.tau, self.m) {
            (None, None) => Err(Error::Config("one of tau or m is required".into())),
            (Some(t), None) if t > 0.0 => Ok((t, 1.0 / (4.0 * t))),
            (None, Some(m)) if m > 0.0 => Ok((1.0 / (4.0 * m), m)),
            (Some(t), Some(m)) if t > 0.0 && m > 0.0 => {
                if ((1.0 / t) / (4.0 * m) - 1.0).abs() > BANDWIDTH_TOL {
                    Err(Error::Config(format!("tau = {t} and m = {m} violate 1/tau = 4m")))
                } else {
                    Ok((t, m))
                }
            }
            _ => Err(Error::Config("tau and m must be positive".into())),
        }
    }

    pub fn fidelity_spec(&self) -> Result<FidelitySpec> {
        let (tau, _) = self.bandwidth()?;
        FidelitySpec::with_quadrature(tau, self.truth.dim(), self.quad_points_per_dim)
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// The penalty for a sample of size `n`.
    pub fn kappa_for(&self, n: usize) -> Result<f64> {
        match self.kappa {
            KappaSpec::Value(k) => Ok(k),
            KappaSpec::Rule(KappaRule::Auto) => {
                let (_, m) = self.bandwidth()?;
                let r = rate_quantities(self.truth.len().max(1), self.truth.dim(), m, n.max(1), &self.mixing_spec()?)?;
                Ok(self.kappa_factor * r.rho_n / r.c_m)
            }
        }
    }

    /// Hex SHA-256 of the normalized JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1: &str = r#"{
        "truth": {"dim": 1, "atoms": [{"w": 0.36, "t": [-13.1]}, {"w": 0.52, "t": [-0.9]}, {"w": 0.12, "t": [14.0]}]},
        "mixing": {"family": "gaussian", "dim": 1},
        "tau": 0.1,
        "kappa": 0.01,
        "n": 200
    }"#;

    #[test]
    fn parses_figure1() {
        let cfg = ExperimentConfig::from_json(FIG1).unwrap();
        let (tau, m) = cfg.bandwidth().unwrap();
        assert_eq!(tau, 0.1);
        assert!((m - 2.5).abs() < 1e-15);
        assert_eq!(cfg.kappa_for(200).unwrap(), 0.01);
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.hash(), ExperimentConfig::from_json(FIG1).unwrap().hash());
    }

    #[test]
    fn bandwidth_cross_check() {
        let both = FIG1.replace("\"tau\": 0.1,", "\"tau\": 0.1, \"m\": 2.5,");
        assert!(ExperimentConfig::from_json(&both).is_ok());
        let bad = FIG1.replace("\"tau\": 0.1,", "\"tau\": 0.1, \"m\": 2.0,");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::Config(_))));
        let none = FIG1.replace("\"tau\": 0.1,", "");
        assert!(ExperimentConfig::from_json(&none).is_err());
    }

    #[test]
    fn auto_kappa_needs_m() {
        let auto = FIG1.replace("\"kappa\": 0.01", "\"kappa\": \"auto\"");
        assert!(ExperimentConfig::from_json(&auto).is_err());
        let with_m = auto.replace("\"tau\": 0.1,", "\"m\": 1.0,");
        let cfg = ExperimentConfig::from_json(&with_m).unwrap();
        let r = rate_quantities(3, 1, 1.0, 200, &MixingKernelSpec::gaussian(1)).unwrap();
        assert!((cfg.kappa_for(200).unwrap() - r.rho_n / r.c_m).abs() < 1e-18);
    }

    #[test]
    fn rejects_unknown_fields() {
        let extra = FIG1.replace("\"n\": 200", "\"n\": 200, \"nn\": 3");
        assert!(ExperimentConfig::from_json(&extra).is_err());
    }
}
