//! Experiments and proof diagnostics built on the annealed, environment and
//! partition layers: Mecke closed forms, event statistics, ε-good probes,
//! fractional moments and the criticality / irrelevance experiments.

pub mod events;
pub mod experiments;
pub mod marginal;
pub mod mecke;

use crate::error::{Error, Result};
use crate::homogeneous::AnnealedModel;
use crate::kernel::{Kernel, KernelSpec};
use crate::spectral::{ReturnCurve, Transitions};
use serde::Serialize;
use std::sync::Arc;

/// Kernel, return curve, transition cache and annealed model for one `J`.
#[derive(Debug, Clone)]
pub struct Context {
    pub kernel: Arc<Kernel>,
    pub trans: Arc<Transitions>,
    pub model: Arc<AnnealedModel>,
}

impl Context {
    pub fn build(spec: KernelSpec) -> Result<Self> {
        let kernel = Arc::new(Kernel::build(spec)?);
        let curve = Arc::new(ReturnCurve::build(&kernel));
        let model = Arc::new(AnnealedModel::with_curve(kernel.clone(), curve.clone())?);
        let trans = Arc::new(Transitions::new(kernel.clone(), curve));
        Ok(Context { kernel, trans, model })
    }

    pub fn curve(&self) -> &Arc<ReturnCurve> {
        self.trans.curve()
    }

    pub fn beta0(&self) -> f64 {
        self.model.beta0()
    }

    pub fn p0(&self, t: f64) -> f64 {
        self.curve().p0(t)
    }

    /// `K(t) = β₀ p0(t)`.
    pub fn k(&self, t: f64) -> f64 {
        self.model.k(t)
    }

    /// `sup {t : p0(t) ≥ q}`; zero for `q ≥ 1`.
    pub fn p0_inverse(&self, q: f64) -> f64 {
        p0_inverse_from(self.curve(), q, 0.0)
    }

    /// `β > β₀` with `F(β) = f`.
    pub fn beta_for_free_energy(&self, f: f64) -> Result<f64> {
        if !(f > 0.0) {
            return Err(Error::invalid("target free energy must be positive"));
        }
        let b0 = self.beta0();
        let (mut lo, mut hi) = (b0, b0 * 2.0);
        while self.model.free_energy(hi)? < f {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.model.free_energy(mid)? < f {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// `sup {t : p0(t) ≥ q}`, searching upward from `from`.
pub(crate) fn p0_inverse_from(curve: &ReturnCurve, q: f64, from: f64) -> f64 {
    if q >= 1.0 {
        return 0.0;
    }
    let mut lo = from;
    let mut hi = (2.0 * from).max(1.0);
    while curve.p0(hi) >= q {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if curve.p0(mid) >= q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// One line of an experiment report.
#[derive(Debug, Clone, Serialize)]
pub struct StatRow {
    pub params: Vec<(String, f64)>,
    pub statistic: String,
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
}

impl StatRow {
    pub fn new(params: &[(&str, f64)], statistic: &str, value: f64, stderr: f64, n: u64) -> Self {
        StatRow {
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            statistic: statistic.to_string(),
            value,
            stderr,
            n,
        }
    }
}

/// Rows of an experiment plus the statement they test.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StatReport {
    pub claim: String,
    pub rows: Vec<StatRow>,
}

impl StatReport {
    pub fn new(claim: impl Into<String>) -> Self {
        StatReport { claim: claim.into(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: StatRow) {
        self.rows.push(row);
    }

    /// First row with this statistic name and matching parameters.
    pub fn find(&self, statistic: &str, params: &[(&str, f64)]) -> Option<&StatRow> {
        self.rows.iter().find(|r| {
            r.statistic == statistic
                && params.iter().all(|(k, v)| r.params.iter().any(|(rk, rv)| rk == k && rv == v))
        })
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::Context;
    use crate::kernel::{KernelSpec, SlowVariation};
    use std::collections::HashMap;
    use std::sync::{Mutex, OnceLock};

    /// Shared contexts keyed by `(γ, κ)`; `κ < 0` means constant `φ`.
    pub fn ctx(gamma: f64, kappa: f64) -> Context {
        static CACHE: OnceLock<Mutex<HashMap<(u64, u64), Context>>> = OnceLock::new();
        let map = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut m = map.lock().unwrap();
        m.entry((gamma.to_bits(), kappa.to_bits()))
            .or_insert_with(|| {
                let mut spec = KernelSpec::new(gamma).with_x_max(1 << 16);
                if kappa >= 0.0 {
                    spec = spec.with_phi(SlowVariation::LogPower { kappa });
                }
                Context::build(spec).unwrap()
            })
            .clone()
    }
}
