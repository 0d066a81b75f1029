//! Strict TOML experiment configuration.

use crate::error::{CliError, Result};
use rwpin::kernel::{KernelSpec, SlowVariation};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelSection,
    pub model: ModelSection,
    pub disorder: DisorderSection,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlowVarKind {
    Constant,
    LogPower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub gamma: f64,
    #[serde(default = "default_slow_var")]
    pub slow_var: SlowVarKind,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default = "default_x_max")]
    pub x_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub t_max: f64,
    pub step: f64,
    /// Values of `β/β₀`.
    #[serde(default)]
    pub beta_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSection {
    pub rho: Vec<f64>,
    pub seed: u64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<String>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub params: BTreeMap<String, Param>,
}

/// A number, a list of numbers or a word under `[experiment.params]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Num(f64),
    List(Vec<f64>),
    Text(String),
}

fn default_slow_var() -> SlowVarKind {
    SlowVarKind::Constant
}

fn default_x_max() -> usize {
    1 << 20
}

fn default_workers() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.kernel;
        check(k.gamma > 0.0 && k.gamma < 1.0, "kernel.gamma", "must lie in (0, 1)")?;
        check(k.kappa >= 0.0 && k.kappa.is_finite(), "kernel.kappa", "must be finite and non-negative")?;
        check(k.slow_var == SlowVarKind::LogPower || k.kappa == 0.0, "kernel.kappa", "only used with slow_var = \"log_power\"")?;
        check(k.x_max >= 1 << 10, "kernel.x_max", "must be at least 1024")?;
        if let Some(t) = k.tail_tol {
            check(t > 0.0 && t < 1.0, "kernel.tail_tol", "must lie in (0, 1)")?;
        }
        let m = &self.model;
        check(m.t_max > 0.0 && m.t_max.is_finite(), "model.t_max", "must be positive")?;
        check(m.step > 0.0 && m.step < m.t_max, "model.step", "must be positive and below t_max")?;
        check(m.beta_grid.iter().all(|&b| b >= 1.0 && b.is_finite()), "model.beta_grid", "entries are β/β₀ and must be ≥ 1")?;
        let d = &self.disorder;
        check(!d.rho.is_empty(), "disorder.rho", "needs at least one value")?;
        check(d.rho.iter().all(|&r| (0.0..=1.0).contains(&r)), "disorder.rho", "entries must lie in [0, 1]")?;
        check(d.samples > 0, "disorder.samples", "must be positive")?;
        check(self.experiment.workers > 0, "experiment.workers", "must be positive")?;
        Ok(())
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        let k = &self.kernel;
        let mut spec = KernelSpec::new(k.gamma).with_x_max(k.x_max);
        if k.slow_var == SlowVarKind::LogPower {
            spec = spec.with_phi(SlowVariation::LogPower { kappa: k.kappa });
        }
        if let Some(t) = k.tail_tol {
            spec.tail_tol = t;
        }
        spec
    }

    /// Parameter reader that rejects keys outside `allowed`.
    pub fn params(&self, allowed: &[&str]) -> Result<Params<'_>> {
        for key in self.experiment.params.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::config(
                    format!("experiment.params.{key}"),
                    format!("unknown parameter for experiment {:?}; expected one of {allowed:?}", self.experiment.name),
                ));
            }
        }
        Ok(Params { map: &self.experiment.params })
    }
}

fn check(ok: bool, key: &str, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(key, reason))
    }
}

pub struct Params<'a> {
    map: &'a BTreeMap<String, Param>,
}

impl Params<'_> {
    pub fn num(&self, key: &str, default: f64) -> Result<f64> {
        match self.map.get(key) {
            None => Ok(default),
            Some(Param::Num(x)) => Ok(*x),
            Some(_) => Err(CliError::config(format!("experiment.params.{key}"), "expected a number")),
        }
    }

    pub fn optional(&self, key: &str) -> Result<Option<f64>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(_) => self.num(key, 0.0).map(Some),
        }
    }

    pub fn text<'s>(&'s self, key: &str, default: &'s str) -> Result<&'s str> {
        match self.map.get(key) {
            None => Ok(default),
            Some(Param::Text(s)) => Ok(s),
            Some(_) => Err(CliError::config(format!("experiment.params.{key}"), "expected a string")),
        }
    }

    pub fn count(&self, key: &str, default: usize) -> Result<usize> {
        let x = self.num(key, default as f64)?;
        if x < 0.0 || x.fract() != 0.0 || x > u32::MAX as f64 {
            return Err(CliError::config(format!("experiment.params.{key}"), "expected a non-negative integer"));
        }
        Ok(x as usize)
    }

    pub fn list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(Param::List(v)) => Ok(v.clone()),
            Some(Param::Num(x)) => Ok(vec![*x]),
            Some(Param::Text(_)) => Err(CliError::config(format!("experiment.params.{key}"), "expected a list of numbers")),
        }
    }

    pub fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let x = self.num(key, default)?;
        if !(x > 0.0 && x.is_finite()) {
            return Err(CliError::config(format!("experiment.params.{key}"), "must be positive"));
        }
        Ok(x)
    }

    pub fn positive_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        let v = self.list(key, default)?;
        if v.is_empty() || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(CliError::config(format!("experiment.params.{key}"), "needs positive entries"));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[kernel]
gamma = 0.75

[model]
t_max = 100.0
step = 0.5
beta_grid = [1.0, 1.5]

[disorder]
rho = [0.0, 0.5]
seed = 7
samples = 10

[experiment]
name = "homogeneous"

[experiment.params]
points = 4
horizons = [10, 20]
"#;

    #[test]
    fn parses_and_hashes_stably() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(c.kernel.x_max, 1 << 20);
        assert_eq!(c.experiment.workers, 1);
        assert_eq!(c.experiment.params["horizons"], Param::List(vec![10.0, 20.0]));
        let again = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn unknown_key_is_named() {
        let bad = BASE.replace("gamma = 0.75", "gamma = 0.75\ngama = 0.5");
        let e = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(e.contains("gama"), "{e}");
        let bad = BASE.replace("seed = 7", "seed = 7\nsamplez = 3");
        assert!(ExperimentConfig::from_toml(&bad).unwrap_err().to_string().contains("samplez"));
    }

    #[test]
    fn missing_section_is_rejected() {
        let bad = BASE.replace("[disorder]\nrho = [0.0, 0.5]\nseed = 7\nsamples = 10\n", "");
        let e = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(e.contains("disorder"), "{e}");
    }

    #[test]
    fn invalid_values_name_the_key() {
        let bad = BASE.replace("gamma = 0.75", "gamma = 1.5");
        assert!(ExperimentConfig::from_toml(&bad).unwrap_err().to_string().contains("kernel.gamma"));
        let bad = BASE.replace("rho = [0.0, 0.5]", "rho = [2.0]");
        assert!(ExperimentConfig::from_toml(&bad).unwrap_err().to_string().contains("disorder.rho"));
    }

    #[test]
    fn params_are_checked_against_the_experiment() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        let p = c.params(&["points", "horizons"]).unwrap();
        assert_eq!(p.count("points", 1).unwrap(), 4);
        assert_eq!(p.list("horizons", &[]).unwrap(), vec![10.0, 20.0]);
        assert_eq!(p.num("absent", 2.5).unwrap(), 2.5);
        assert!(p.num("horizons", 0.0).is_err());
        let e = c.params(&["points"]).err().unwrap().to_string();
        assert!(e.contains("experiment.params.horizons"), "{e}");
    }
}
