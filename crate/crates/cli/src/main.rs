use clap::{Args, Parser, Subcommand, ValueEnum};
use rwpin_cli::config::{ExperimentConfig, Param};
use rwpin_cli::error::{CliError, Result};
use rwpin_cli::registry;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rwpin", version, about = "Experiments for a random walk pinned to a sparse heavy-tailed random walk")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML); defaults to the bundled one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overrides `disorder.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, overrides `experiment.workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct WithRegime {
    #[command(flatten)]
    common: Common,
    /// Overrides `experiment.regime`.
    #[arg(long)]
    regime: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Volterra,
    Mc,
    Both,
}

#[derive(Args, Clone)]
struct SimArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Absolute β; defaults to β₀.
    #[arg(long)]
    beta: Option<f64>,
    /// Horizon.
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    method: Option<Method>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Kernel identities, return curve and optional kernel table.
    KernelReport(Common),
    /// Annealed free energy and renewal density.
    Homogeneous(Common),
    /// Quenched partition functions of sampled environments.
    SimulateZ(SimArgs),
    /// ε-good event probes.
    Events(WithRegime),
    /// Sub-2/3 and marginal relevance diagnostics.
    Relevance(WithRegime),
    /// Irrelevance gap or criticality decay.
    Irrelevance(WithRegime),
    /// Fractional moments over coarse-grained blocks.
    Fracmoment(Common),
    /// Any experiment, dispatched on `experiment.name`.
    Run(Common),
    /// Print the claim registry.
    Claims,
}

fn load(common: &Common, default: Option<&str>, accepted: &[&str]) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, default) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::from_toml(registry::bundled_config(name).expect("bundled config"))?,
        (None, None) => return Err(CliError::config("--config", "required for this subcommand")),
    };
    if !accepted.is_empty() && !accepted.contains(&cfg.experiment.name.as_str()) {
        return Err(CliError::config("experiment.name", format!("{:?} does not belong to this subcommand; expected one of {accepted:?}", cfg.experiment.name)));
    }
    if let Some(s) = common.seed {
        cfg.disorder.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.experiment.workers = w;
    }
    Ok(cfg)
}

fn with_regime(a: &WithRegime, default: &str, accepted: &[&str]) -> Result<ExperimentConfig> {
    let mut cfg = load(&a.common, Some(default), accepted)?;
    if let Some(r) = &a.regime {
        cfg.experiment.regime = Some(r.clone());
    }
    Ok(cfg)
}

fn simulate(a: &SimArgs) -> Result<ExperimentConfig> {
    let mut cfg = load(&a.common, Some("simulate-z.toml"), &["simulate-z"])?;
    let params = &mut cfg.experiment.params;
    if let Some(g) = a.gamma {
        cfg.kernel.gamma = g;
    }
    if let Some(r) = a.rho {
        cfg.disorder.rho = vec![r];
    }
    if let Some(b) = a.beta {
        params.insert("beta".into(), Param::Num(b));
    }
    if let Some(t) = a.horizon {
        params.insert("horizon".into(), Param::Num(t));
        cfg.model.t_max = cfg.model.t_max.max(t);
    }
    if let Some(m) = a.method {
        let name = match m {
            Method::Volterra => "volterra",
            Method::Mc => "mc",
            Method::Both => "both",
        };
        params.insert("method".into(), Param::Text(name.into()));
    }
    if let Some(h) = a.step {
        cfg.model.step = h;
    }
    if let Some(n) = a.samples {
        cfg.disorder.samples = n;
    }
    Ok(cfg)
}

fn dispatch(cmd: Cmd) -> Result<()> {
    let (cfg, out) = match &cmd {
        Cmd::Claims => {
            print!("{}", registry::list_claims());
            return Ok(());
        }
        Cmd::KernelReport(c) => (load(c, Some("kernel-report.toml"), &["kernel-report"])?, &c.out),
        Cmd::Homogeneous(c) => (load(c, Some("homogeneous.toml"), &["homogeneous"])?, &c.out),
        Cmd::SimulateZ(a) => (simulate(a)?, &a.common.out),
        Cmd::Events(a) => (with_regime(a, "events.toml", &["events"])?, &a.common.out),
        Cmd::Relevance(a) => (with_regime(a, "relevance-marginal.toml", &["relevance"])?, &a.common.out),
        Cmd::Irrelevance(a) => (with_regime(a, "irrelevance.toml", &["irrelevance", "criticality"])?, &a.common.out),
        Cmd::Fracmoment(c) => (load(c, Some("fracmoment.toml"), &["fracmoment"])?, &c.out),
        Cmd::Run(c) => (load(c, None, &[])?, &c.out),
    };
    let m = rwpin_cli::run(&cfg, out)?;
    println!("experiment {} finished, config sha256 {}", m.experiment, m.config_hash);
    for f in &m.outputs {
        println!("  {}", out.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rwpin: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_line_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn every_subcommand_parses() {
        for args in [
            vec!["rwpin", "claims"],
            vec!["rwpin", "kernel-report", "--out", "o"],
            vec!["rwpin", "homogeneous", "--config", "c.toml", "--seed", "3", "--workers", "2"],
            vec!["rwpin", "simulate-z", "--gamma", "0.75", "--rho", "0.3", "--beta", "0.5", "--T", "20", "--step", "0.1", "--samples", "4", "--seed", "1", "--method", "both"],
            vec!["rwpin", "events", "--regime", "criticality"],
            vec!["rwpin", "relevance", "--regime", "marginal"],
            vec!["rwpin", "irrelevance", "--regime", "gap"],
            vec!["rwpin", "fracmoment"],
            vec!["rwpin", "run", "--config", "c.toml"],
        ] {
            Cli::try_parse_from(&args).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        }
        assert!(Cli::try_parse_from(["rwpin", "simulate-z", "--method", "euler"]).is_err());
    }
}
