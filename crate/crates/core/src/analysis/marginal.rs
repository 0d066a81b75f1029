//! Amplitude-weighted jump statistics for the marginal case `γ = 2/3`.

use super::mecke::{xi_mean, BlockLaw};
use super::Context;
use crate::environment::EnvPath;
use crate::error::Result;
use crate::numeric::{self, Sum};
use crate::stats::{self, Regression};
use serde::Serialize;

/// `ξ`, `S(T)`, `ψ(T)` and the amplitude cutoff `2β₀/K(T)` for one horizon.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalWeights {
    pub horizon: f64,
    pub s_of_t: f64,
    pub psi_of_t: f64,
    pub threshold: f64,
    #[serde(skip)]
    phi: crate::kernel::SlowVariation,
}

impl MarginalWeights {
    pub fn new(ctx: &Context, horizon: f64) -> Self {
        let phi = ctx.kernel.spec().phi;
        let inv_k = 1.0 / ctx.k(horizon);
        let s_of_t = s_integral(&phi, inv_k);
        MarginalWeights {
            horizon,
            s_of_t,
            psi_of_t: phi.eval(inv_k).powi(3) * s_of_t,
            threshold: 2.0 * ctx.beta0() * inv_k,
            phi,
        }
    }

    /// `ξ(k) = k^{1/3} φ(k)^{-2}`.
    pub fn xi(&self, k: u64) -> f64 {
        xi(&self.phi, k as f64)
    }

    /// Largest amplitude counted by `F_T`.
    pub fn cutoff(&self) -> u64 {
        self.threshold.floor() as u64
    }
}

pub fn xi(phi: &crate::kernel::SlowVariation, k: f64) -> f64 {
    k.cbrt() / phi.eval(k).powi(2)
}

/// `∫_1^x ds / (s φ(s)³)`.
pub fn s_integral(phi: &crate::kernel::SlowVariation, x: f64) -> f64 {
    if x <= 1.0 {
        return 0.0;
    }
    numeric::integrate(|u| phi.eval(u.exp()).powi(-3), 0.0, x.ln(), 0.0, 1e-12)
}

/// `F_T = Σ_{ϑ_i ∈ (0,T]} ξ(U_i) 1{U_i K(T) ≤ 2β₀}`.
pub fn marginal_stat(path: &EnvPath, w: &MarginalWeights) -> f64 {
    let cut = w.cutoff();
    let mut s = Sum::default();
    for j in path.window(0.0, w.horizon) {
        if j.u <= cut {
            s.add(w.xi(j.u));
        }
    }
    s.value()
}

/// `E[F_T]`, or its mean under the law weighted by a block of length `T`.
pub fn marginal_mean(ctx: &Context, rho: f64, w: &MarginalWeights, block: Option<&BlockLaw>) -> f64 {
    xi_mean(ctx, rho, w.horizon, w.cutoff(), |k| w.xi(k), block)
}

/// `Var(F_T) = ρ T Σ_{ℓ ≤ cutoff} ξ(ℓ)² μ̄(ℓ)` (compound Poisson).
pub fn marginal_variance(ctx: &Context, rho: f64, w: &MarginalWeights) -> f64 {
    xi_mean(ctx, rho, w.horizon, w.cutoff(), |k| w.xi(k).powi(2), None)
}

/// One row of the variance and growth table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MarginalRow {
    pub horizon: f64,
    pub variance: f64,
    pub s_of_t: f64,
    pub psi_of_t: f64,
    /// `Var(F_T) / (ρ T S(T))`.
    pub ratio: f64,
}

pub fn marginal_table(ctx: &Context, rho: f64, horizons: &[f64]) -> Vec<MarginalRow> {
    horizons
        .iter()
        .map(|&t| {
            let w = MarginalWeights::new(ctx, t);
            let variance = marginal_variance(ctx, rho, &w);
            MarginalRow { horizon: t, variance, s_of_t: w.s_of_t, psi_of_t: w.psi_of_t, ratio: variance / (rho * t * w.s_of_t) }
        })
        .collect()
}

/// Exponent of `ψ(T)` as a power of `log(1/K(T))`, fitted over `horizons`.
pub fn psi_exponent(ctx: &Context, horizons: &[f64]) -> Regression {
    let xs: Vec<f64> = horizons.iter().map(|&t| (1.0 / ctx.k(t)).ln().ln()).collect();
    let ys: Vec<f64> = horizons.iter().map(|&t| MarginalWeights::new(ctx, t).psi_of_t.ln()).collect();
    stats::regress(&xs, &ys)
}

/// `ψ^{-1}(level)`: the smallest horizon with `ψ(T) ≥ level`, by bisection
/// on the monotone map `T ↦ ψ(T)`.
pub fn psi_inverse(ctx: &Context, level: f64) -> Result<f64> {
    let psi = |t: f64| MarginalWeights::new(ctx, t).psi_of_t;
    let mut lo = 1e-3;
    if psi(lo) >= level {
        return Ok(lo);
    }
    let mut hi = 1.0;
    while psi(hi) < level {
        lo = hi;
        hi *= 4.0;
        if hi > 1e12 {
            return Err(crate::Error::numerical(format!("ψ does not reach {level} below T = 1e12")));
        }
    }
    for _ in 0..200 {
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        if psi(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-12 {
            break;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::testing::ctx;
    use crate::environment::sample_env;
    use crate::kernel::SlowVariation;
    use crate::rng::stream;
    use crate::stats::Moments;

    #[test]
    fn xi_of_eight_is_two() {
        assert!((xi(&SlowVariation::Constant, 8.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn s_integral_closed_forms() {
        assert!((s_integral(&SlowVariation::Constant, 1e6) - 1e6f64.ln()).abs() < 1e-10);
        // φ = ln(e+s): ∫ ds / (s ln(e+s)^3) against a direct trapezoid sum in ln s
        let phi = SlowVariation::LogPower { kappa: 1.0 };
        let n = 400_000;
        let top = 1e5f64.ln();
        let h = top / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * h * (std::f64::consts::E + (i as f64 * h).exp()).ln().powi(-3);
        }
        assert!((s_integral(&phi, 1e5) / acc - 1.0).abs() < 1e-8);
    }

    #[test]
    fn weights_grow_with_horizon() {
        let c = ctx(2.0 / 3.0, 1.0);
        let mut last = (0.0, 0.0);
        for &t in &[10.0, 50.0, 200.0, 800.0] {
            let w = MarginalWeights::new(&c, t);
            assert!(w.s_of_t > last.0 && w.psi_of_t > last.1);
            last = (w.s_of_t, w.psi_of_t);
        }
    }

    #[test]
    fn variance_matches_monte_carlo() {
        let c = ctx(2.0 / 3.0, -1.0);
        let (rho, t) = (0.5, 50.0);
        let w = MarginalWeights::new(&c, t);
        let mut rng = stream(1, 0);
        let m: Moments = (0..40_000).map(|_| marginal_stat(&sample_env(&c.kernel, rho, t, &mut rng).unwrap(), &w)).collect();
        let mean = marginal_mean(&c, rho, &w, None);
        let var = marginal_variance(&c, rho, &w);
        assert!((m.mean - mean).abs() < 4.0 * m.stderr());
        // the sample variance of a Poisson sum has relative error ~ sqrt(κ4/n); allow 10%
        assert!((m.variance() / var - 1.0).abs() < 0.1, "{} {var}", m.variance());
    }

    #[test]
    fn psi_inverse_round_trip() {
        let c = ctx(2.0 / 3.0, 1.0);
        let t = psi_inverse(&c, 40.0).unwrap();
        assert!((MarginalWeights::new(&c, t).psi_of_t / 40.0 - 1.0).abs() < 1e-6);
    }
}
