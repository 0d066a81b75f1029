//! Experiment runner: configuration, dispatch, CSV and manifest output.

pub mod commands;
pub mod config;
pub mod csv;
pub mod error;
pub mod registry;

use config::ExperimentConfig;
use error::{CliError, Result};
use serde::Serialize;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub workers: usize,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: u64,
    pub outputs: Vec<String>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Runs `cfg` on a pool of `experiment.workers` threads and writes the CSVs,
/// `summary.txt`, the effective `config.toml` and `manifest.json` to `out`.
/// Failed invariant checks are reported after everything is written.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    commands::dry_check(cfg)?;
    let started = now();
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.experiment.workers)
        .build()
        .map_err(|e| CliError::config("experiment.workers", e.to_string()))?;
    let output = pool.install(|| commands::execute(cfg))?;

    let hash = cfg.hash();
    let header = format!(
        "rwpin-csv v{}; experiment={}; config_sha256={hash}; seed={}; workers={}; version={VERSION}",
        csv::SCHEMA_VERSION,
        cfg.experiment.name,
        cfg.disorder.seed,
        cfg.experiment.workers
    );
    let mut outputs = Vec::new();
    for (name, table) in &output.files {
        write(&out.join(name), &table.render(&header))?;
        outputs.push(name.clone());
    }

    let mut summary = format!("experiment: {}\nconfig sha256: {hash}\n", cfg.experiment.name);
    for c in &output.claims {
        summary.push_str(&format!("claim tested: {c}\n"));
    }
    for l in &output.summary {
        summary.push_str(l);
        summary.push('\n');
    }
    for c in &output.checks {
        summary.push_str(&format!("check {}: {} ({})\n", c.name, if c.ok { "ok" } else { "FAILED" }, c.detail));
    }
    write(&out.join("summary.txt"), &summary)?;
    write(&out.join("config.toml"), &cfg.to_toml())?;
    outputs.extend(["summary.txt".to_string(), "config.toml".to_string()]);

    let manifest = RunManifest {
        experiment: cfg.experiment.name.clone(),
        config_hash: hash,
        master_seed: cfg.disorder.seed,
        workers: cfg.experiment.workers,
        tool_version: VERSION.to_string(),
        started,
        finished: now(),
        outputs,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&out.join("manifest.json"), &json)?;

    if let Some(c) = output.checks.iter().find(|c| !c.ok) {
        return Err(CliError::Invariant { name: c.name.clone(), detail: c.detail.clone() });
    }
    Ok(manifest)
}
