//! Claim registry: each statement under test, the core routine that
//! computes it, the configuration that reproduces it and its tolerance.

use rwpin::analysis::{events, experiments};
use rwpin::homogeneous::AnnealedModel;
use rwpin::kernel::Kernel;
use rwpin::spectral::ReturnCurve;

#[derive(Debug, Clone, Copy)]
pub struct Claim {
    pub id: &'static str,
    pub statement: &'static str,
    /// Path of the core routine, resolved by [`resolve_op`].
    pub op: &'static str,
    /// File under `configs/`.
    pub config: &'static str,
    pub tolerance: &'static str,
}

pub const CLAIMS: &[Claim] = &[
    Claim {
        id: "kernel-exactness",
        statement: "J is normalized, the second marginal telescopes and its tail sum has the closed form",
        op: "rwpin::kernel::Kernel::build",
        config: "kernel-report.toml",
        tolerance: "|ΣJ-1| ≤ 1e-12; telescoping ≤ 1e-14; tail identity ≤ 1e-12; tail ratio within 1% of 2(1+γ)/γ at n=1e5",
    },
    Claim {
        id: "local-limit",
        statement: "p0(t) decays like t^(-1/γ) and the transition laws are unimodal",
        op: "rwpin::spectral::ReturnCurve::fitted_exponent",
        config: "kernel-report.toml",
        tolerance: "exponent -1/γ ± 0.05 on [1e2, 1e4] for γ ∈ {0.4, 0.5, 0.75} (set kernel.gamma)",
    },
    Claim {
        id: "free-energy",
        statement: "F(β₀) = 0, F is convex and grows like (β-β₀)^ν",
        op: "rwpin::homogeneous::AnnealedModel::free_energy",
        config: "homogeneous.toml",
        tolerance: "|F(β₀)| ≤ 1e-8; ν = 3 ± 0.15 at γ = 0.75, ν = 1 ± 0.05 at γ = 0.4 (homogeneous-finite-mean.toml)",
    },
    Claim {
        id: "renewal-asymptotics",
        statement: "the critical renewal density follows the Doney asymptotic, or 1/m when the mean is finite",
        op: "rwpin::homogeneous::AnnealedModel::renewal_density_unit_mass",
        config: "homogeneous.toml",
        tolerance: "doney_ratio within 10% of 1 at t = 1e3 (γ = 0.75); u m within 2% of 1 (γ = 0.4)",
    },
    Claim {
        id: "construction-equivalence",
        statement: "the enriched Poisson construction and the plain compound Poisson walk give the same law of Y_T",
        op: "rwpin::analysis::experiments::construction_equivalence",
        config: "construction.toml",
        tolerance: "two-sample chi-square p > 0.001",
    },
    Claim {
        id: "size-biased-blocks",
        statement: "under the weighted law Y_t is a sum of bridge blocks",
        op: "rwpin::analysis::experiments::size_biased_marginal",
        config: "size-biased.toml",
        tolerance: "weighted-versus-bridge chi-square p > 0.001",
    },
    Claim {
        id: "stochastic-domination",
        statement: "jump functionals under the weighted law are dominated by their plain expectations",
        op: "rwpin::analysis::experiments::domination_report",
        config: "domination.toml",
        tolerance: "weighted mean ≤ plain mean + 4 stderr",
    },
    Claim {
        id: "mecke-closed-forms",
        statement: "weighted means of jump functionals match their Mecke closed forms; the shift bound holds for t ≤ 1/F",
        op: "rwpin::analysis::experiments::mecke_report",
        config: "mecke.toml",
        tolerance: "|MC - closed form| ≤ 4 stderr; shift bound exact",
    },
    Claim {
        id: "partition-engines",
        statement: "Volterra and Monte Carlo partition engines agree and E[Z^Y] equals the annealed partition function",
        op: "rwpin::analysis::experiments::partition_engines",
        config: "engines.toml",
        tolerance: "ρ = 0 error ≤ 1e-6; E[W] = 1 ± 4 stderr; engines within 4 stderr",
    },
    Claim {
        id: "criticality-decay",
        statement: "at β₀ the median normalized partition function decays in T when ρ > 0",
        op: "rwpin::analysis::experiments::criticality_experiment",
        config: "criticality.toml",
        tolerance: "slope ≤ -0.02 at ρ = 0.5; |slope| ≤ 0.01 at ρ = 0; slope(0.8) < slope(0.2)",
    },
    Claim {
        id: "irrelevance-gap",
        statement: "above β₀ the truncated moment E[1 ∧ W] decays exponentially while E[W] = 1",
        op: "rwpin::analysis::experiments::irrelevance_gap",
        config: "irrelevance.toml",
        tolerance: "(1/T) log E[1 ∧ W] < 0 at 3 sigma; E[W] = 1 ± 4 stderr",
    },
    Claim {
        id: "marginal-statistics",
        statement: "at γ = 2/3 the amplitude-weighted count has variance of order ρT S(T) and ψ grows as a power of log(1/K)",
        op: "rwpin::analysis::experiments::marginal_report",
        config: "relevance-marginal.toml",
        tolerance: "variance ratio in a fixed interval over T ∈ [50, 800]; ψ exponent within 0.15 (κ ∈ {0, 1})",
    },
    Claim {
        id: "epsilon-good-probe",
        statement: "the sub-2/3 event has small probability yet carries most of the weighted mass",
        op: "rwpin::analysis::experiments::sub_two_thirds_probe",
        config: "relevance-sub-two-thirds.toml",
        tolerance: "P(A) ≤ 1/R² + 3 stderr at R = 5; inner effective sample ≥ 10%",
    },
    Claim {
        id: "expectation-shift",
        statement: "the weighted law shifts the mean of each event statistic by at most a fixed fraction of its scale",
        op: "rwpin::analysis::experiments::expectation_shift_report",
        config: "relevance-sub-two-thirds.toml",
        tolerance: "reported ratio (E - E_Δ)/scale, closed form",
    },
    Claim {
        id: "fractional-moment",
        statement: "fractional moments of the free partition function stay bounded over coarse-grained blocks",
        op: "rwpin::analysis::experiments::fractional_moment",
        config: "fracmoment.toml",
        tolerance: "qualitative: max/min of the moment sequence reported",
    },
    Claim {
        id: "event-probes",
        statement: "ε-good events in each regime: rare under P, typical under the weighted law",
        op: "rwpin::analysis::events::epsilon_good_probe",
        config: "events.toml",
        tolerance: "reported P(A), Q[P_τ(A^c)] and effective sample",
    },
    Claim {
        id: "local-time-tail",
        statement: "the maximal local time of the environment has an exponential tail with rate ρ p_esc",
        op: "rwpin::analysis::experiments::local_time_tail",
        config: "local-time.toml",
        tolerance: "rate within 4 stderr plus the escape cutoff bias",
    },
];

/// Address of the routine named by `op`; `None` for an unknown path.
/// Each arm names a real item, so a renamed routine fails to compile here.
pub fn resolve_op(op: &str) -> Option<*const ()> {
    Some(match op {
        "rwpin::kernel::Kernel::build" => Kernel::build as *const (),
        "rwpin::spectral::ReturnCurve::fitted_exponent" => ReturnCurve::fitted_exponent as *const (),
        "rwpin::homogeneous::AnnealedModel::free_energy" => AnnealedModel::free_energy as *const (),
        "rwpin::homogeneous::AnnealedModel::renewal_density_unit_mass" => AnnealedModel::renewal_density_unit_mass as *const (),
        "rwpin::analysis::experiments::construction_equivalence" => experiments::construction_equivalence as *const (),
        "rwpin::analysis::experiments::size_biased_marginal" => experiments::size_biased_marginal as *const (),
        "rwpin::analysis::experiments::domination_report" => experiments::domination_report as *const (),
        "rwpin::analysis::experiments::mecke_report" => experiments::mecke_report as *const (),
        "rwpin::analysis::experiments::partition_engines" => experiments::partition_engines as *const (),
        "rwpin::analysis::experiments::criticality_experiment" => experiments::criticality_experiment as *const (),
        "rwpin::analysis::experiments::irrelevance_gap" => experiments::irrelevance_gap as *const (),
        "rwpin::analysis::experiments::marginal_report" => experiments::marginal_report as *const (),
        "rwpin::analysis::experiments::sub_two_thirds_probe" => experiments::sub_two_thirds_probe as *const (),
        "rwpin::analysis::experiments::expectation_shift_report" => experiments::expectation_shift_report as *const (),
        "rwpin::analysis::experiments::fractional_moment" => experiments::fractional_moment as *const (),
        "rwpin::analysis::experiments::local_time_tail" => experiments::local_time_tail as *const (),
        "rwpin::analysis::events::epsilon_good_probe" => events::epsilon_good_probe as *const (),
        _ => return None,
    })
}

macro_rules! configs {
    ($($name:literal),* $(,)?) => {
        /// Bundled configuration files, by name.
        pub const CONFIGS: &[(&str, &str)] = &[
            $(($name, include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/", $name)))),*
        ];
    };
}

configs!(
    "kernel-report.toml",
    "homogeneous.toml",
    "homogeneous-finite-mean.toml",
    "simulate-z.toml",
    "construction.toml",
    "size-biased.toml",
    "domination.toml",
    "mecke.toml",
    "engines.toml",
    "criticality.toml",
    "irrelevance.toml",
    "relevance-marginal.toml",
    "relevance-sub-two-thirds.toml",
    "fracmoment.toml",
    "events.toml",
    "local-time.toml",
);

pub fn bundled_config(name: &str) -> Option<&'static str> {
    CONFIGS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Plain-text table of the registry.
pub fn list_claims() -> String {
    let mut out = String::new();
    let w = CLAIMS.iter().map(|c| c.id.len()).max().unwrap_or(0);
    for c in CLAIMS {
        out.push_str(&format!("{:w$}  {}\n{:w$}  op: {}\n{:w$}  config: configs/{}\n{:w$}  tolerance: {}\n", c.id, c.statement, "", c.op, "", c.config, "", c.tolerance));
    }
    out.push_str(&format!("{} claims\n", CLAIMS.len()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commands::{dry_check, EXPERIMENTS};
    use crate::config::ExperimentConfig;

    #[test]
    fn every_op_resolves() {
        for c in CLAIMS {
            assert!(resolve_op(c.op).is_some(), "{}", c.op);
        }
        assert!(resolve_op("rwpin::nothing").is_none());
    }

    #[test]
    fn registry_is_complete() {
        assert!(CLAIMS.len() >= 13);
        let mut ids: Vec<&str> = CLAIMS.iter().map(|c| c.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), CLAIMS.len());
        let text = list_claims();
        for c in CLAIMS {
            assert!(text.contains(c.id));
        }
    }

    #[test]
    fn bundled_configs_parse_and_name_known_experiments() {
        for c in CLAIMS {
            assert!(bundled_config(c.config).is_some(), "{}", c.config);
        }
        for (name, text) in CONFIGS {
            let cfg = ExperimentConfig::from_toml(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(EXPERIMENTS.contains(&cfg.experiment.name.as_str()), "{name}");
            dry_check(&cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}
