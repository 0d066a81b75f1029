//! Environment events `𝒜`, contact-set events `B`, and the nested Monte
//! Carlo probe of `P(𝒜)` and `Q_{[r,s]}[P_τ(𝒜^∁)]`.

use super::marginal::{self, MarginalWeights};
use super::mecke::{count_mean, criticality_mean, jump_threshold};
use super::{Context, StatReport, StatRow};
use crate::environment::{chain_weight, sample_env, size_biased_blocks, EnvPath};
use crate::error::{Error, Result};
use crate::homogeneous::DiscreteRenewal;
use crate::partition::BridgeSampler;
use crate::rng::stream;
use crate::stats::{Moments, Weighted};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Truncated jump count against `E[𝒥^β]`, contact gaps below `1/F`.
    TruncatedFenergy,
    /// Time-dependent amplitude threshold at `β₀`.
    Criticality,
    /// Maximal local time, `ρ` close to one.
    LargeRho,
    /// Plain jump count, `γ < 2/3`.
    SubTwoThirds,
    /// Amplitude-weighted count, `γ = 2/3`.
    Marginal,
}

impl Regime {
    pub const ALL: [Regime; 5] = [Regime::TruncatedFenergy, Regime::Criticality, Regime::LargeRho, Regime::SubTwoThirds, Regime::Marginal];

    pub fn name(self) -> &'static str {
        match self {
            Regime::TruncatedFenergy => "truncated_fenergy",
            Regime::Criticality => "criticality",
            Regime::LargeRho => "large_rho",
            Regime::SubTwoThirds => "sub_two_thirds",
            Regime::Marginal => "marginal",
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown regime {s:?}")))
    }
}

/// `η`, `δ`, `ε`, `R`; each regime reads the ones it uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventParams {
    pub eta: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub r: f64,
}

impl Default for EventParams {
    fn default() -> Self {
        EventParams { eta: 0.1, delta: 0.1, epsilon: 0.2, r: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventSpec {
    pub regime: Regime,
    pub params: EventParams,
    pub horizon: f64,
    pub window: (f64, f64),
}

impl EventSpec {
    /// # Errors
    /// Needs `0 ≤ r < s ≤ T` and positive parameters.
    pub fn new(regime: Regime, params: EventParams, horizon: f64, window: (f64, f64)) -> Result<Self> {
        let (r, s) = window;
        if !(horizon > 0.0 && r >= 0.0 && s > r && s <= horizon) {
            return Err(Error::invalid(format!("window [{r}, {s}] must satisfy 0 ≤ r < s ≤ T = {horizon}")));
        }
        let p = params;
        if !(p.eta > 0.0 && p.delta > 0.0 && p.epsilon > 0.0 && p.epsilon < 1.0 && p.r > 0.0) {
            return Err(Error::invalid("event parameters must be positive, with ε < 1"));
        }
        Ok(EventSpec { regime, params, horizon, window })
    }

    /// Whether the window is long enough for a probe: `s - r ≥ εT`.
    pub fn probe_window_ok(&self) -> bool {
        self.window.1 - self.window.0 >= self.params.epsilon * self.horizon * (1.0 - 1e-12)
    }
}

/// `#{i : ϑ_i ∈ (a,b], U_i ≥ threshold}`.
pub fn jump_count(path: &EnvPath, a: f64, b: f64, threshold: f64) -> u64 {
    path.window(a, b).iter().filter(|j| j.u as f64 >= threshold).count() as u64
}

/// `F_{(a,b]} = #{i : ϑ_i ∈ (a,b], U_i K(ϑ_i) ≥ β₀}`.
pub fn criticality_stat(path: &EnvPath, a: f64, b: f64, ctx: &Context) -> u64 {
    path.window(a, b).iter().filter(|j| j.u as f64 * ctx.p0(j.theta) >= 1.0).count() as u64
}

#[derive(Debug, Clone)]
enum Prepared {
    Truncated { threshold: f64, mean: f64, free_energy: f64 },
    Criticality { mean: f64 },
    LargeRho { level: f64 },
    Jumps { level: f64 },
    Marginal { weights: MarginalWeights, mean: f64, sd: f64, b_level: f64 },
}

/// Thresholds and means for one `(spec, ρ, β)`, computed once.
#[derive(Debug, Clone)]
pub struct EventSet {
    pub spec: EventSpec,
    pub rho: f64,
    pub beta: f64,
    alpha: f64,
    kind: Prepared,
    ctx: Context,
}

impl EventSet {
    pub fn new(ctx: &Context, spec: EventSpec, rho: f64, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::invalid(format!("rho must lie in [0,1), got {rho}")));
        }
        let t = spec.horizon;
        let p = spec.params;
        let kind = match spec.regime {
            Regime::TruncatedFenergy => {
                let free_energy = ctx.model.free_energy(beta)?;
                if free_energy == 0.0 {
                    return Err(Error::invalid("truncated_fenergy needs β > β₀"));
                }
                let threshold = jump_threshold(ctx, beta)?;
                Prepared::Truncated { threshold, mean: count_mean(ctx, rho, t, threshold), free_energy }
            }
            Regime::Criticality => Prepared::Criticality { mean: criticality_mean(ctx, rho, 0.0, t, None) },
            Regime::LargeRho => Prepared::LargeRho { level: t.ln().powi(2) },
            Regime::SubTwoThirds => Prepared::Jumps { level: rho * t - p.r * (rho * t).sqrt() },
            Regime::Marginal => {
                let weights = MarginalWeights::new(ctx, t);
                let mean = marginal::marginal_mean(ctx, rho, &weights, None);
                let sd = marginal::marginal_variance(ctx, rho, &weights).sqrt();
                let b_level = p.epsilon.powi(5) * weights.s_of_t / (t * ctx.k(t));
                Prepared::Marginal { weights, mean, sd, b_level }
            }
        };
        Ok(EventSet { spec, rho, beta, alpha: ctx.model.alpha(), kind, ctx: ctx.clone() })
    }

    /// Indicator of `𝒜` for an environment on `[0, T]`.
    pub fn a(&self, path: &EnvPath) -> bool {
        let t = self.spec.horizon;
        let p = self.spec.params;
        match &self.kind {
            Prepared::Truncated { threshold, mean, .. } => jump_count(path, 0.0, t, *threshold) as f64 <= (1.0 - p.eta) * mean,
            Prepared::Criticality { mean } => criticality_stat(path, 0.0, t, &self.ctx) as f64 - mean <= -p.eta * self.rho * t.ln(),
            Prepared::LargeRho { level } => path.local_time_max().0 >= *level,
            Prepared::Jumps { level } => (jump_count(path, 0.0, t, 0.0) as f64) < *level,
            Prepared::Marginal { weights, mean, sd, .. } => marginal::marginal_stat(path, weights) - mean <= -sd / p.epsilon,
        }
    }

    /// Indicator of `B` for contact points `tau` (absolute times, starting
    /// at the left end of the window). An empty or single-point set is
    /// never in `B`.
    pub fn b(&self, tau: &[f64]) -> bool {
        if tau.len() < 2 {
            return false;
        }
        let t = self.spec.horizon;
        let p = self.spec.params;
        let (r, s) = self.spec.window;
        let gaps = tau.windows(2).map(|w| (w[0] - r, w[1] - r, w[1] - w[0]));
        // the first-half sums run over τ_j ≤ (s - r)/2, measured from r
        let half = 0.5 * (s - r);
        match &self.kind {
            Prepared::Truncated { free_energy, .. } => {
                let sum: f64 = gaps.filter(|g| g.1 <= half && g.2 * free_energy <= 1.0).map(|g| g.2).sum();
                sum >= p.delta * t
            }
            Prepared::Criticality { .. } => {
                let sum: f64 = gaps.filter(|g| g.1 <= half).map(|g| g.2 / g.1.max(1.0)).sum();
                sum >= p.delta * t.ln()
            }
            Prepared::LargeRho { .. } | Prepared::Jumps { .. } => {
                let count = gaps.filter(|g| (1.0..=2.0).contains(&g.2)).count() as f64;
                count >= t.powf(self.alpha.min(1.0)) / p.r
            }
            Prepared::Marginal { b_level, .. } => {
                let phi = self.ctx.kernel.spec().phi;
                let sum: f64 = gaps.map(|g| marginal::xi(&phi, 1.0 / self.ctx.k(g.2))).sum();
                sum >= *b_level
            }
        }
    }
}

/// Nested Monte Carlo summary of one probe.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub p_a: f64,
    pub p_a_se: f64,
    /// `Q_{[r,s]}[P_τ(𝒜^∁)]`.
    pub q_ac: f64,
    pub q_ac_se: f64,
    pub q_bc: f64,
    pub q_bc_se: f64,
    pub ess_min: f64,
    pub ess_mean: f64,
    /// Outer samples whose inner effective sample fell below `ess_floor`.
    pub collapsed: usize,
    pub n_outer: usize,
    pub n_inner: usize,
    pub report: StatReport,
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub n_outer: usize,
    pub n_inner: usize,
    /// Grid step of the renewal bridge.
    pub step: f64,
    pub ess_floor: f64,
    pub seed: u64,
}

struct OuterSample {
    a_hits: u64,
    inner: f64,
    ess: f64,
    in_b: bool,
}

/// Outer: `τ ~ Q_{β,[r,s]}` on a grid. Inner: `n_inner` environments from
/// `P`, weighted by `∏ w(τ_{i-1}, τ_i, Y)`, giving a self-normalized
/// estimate of `P_τ(𝒜^∁)`. The unweighted inner draws also estimate `P(𝒜)`.
pub fn epsilon_good_probe(events: &EventSet, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let spec = &events.spec;
    if !spec.probe_window_ok() {
        return Err(Error::invalid("probe window shorter than εT"));
    }
    if cfg.n_outer < 2 || cfg.n_inner < 2 {
        return Err(Error::invalid("probe needs at least two outer and two inner samples"));
    }
    let ctx = &events.ctx;
    let (r, s) = spec.window;
    let renewal = DiscreteRenewal::new(&ctx.model, events.beta, s - r, cfg.step)?;
    let n = renewal.len() - 1;
    let h = (s - r) / n as f64;
    let sampler = BridgeSampler::new(&renewal);
    let outer: Vec<OuterSample> = (0..cfg.n_outer)
        .into_par_iter()
        .map(|i| -> Result<OuterSample> {
            let mut rng = stream(cfg.seed, i as u64);
            let tau: Vec<f64> = sampler.sample(n, &mut rng).into_iter().map(|k| r + k as f64 * h).collect();
            let mut wsum = Weighted::default();
            let mut a_hits = 0;
            for _ in 0..cfg.n_inner {
                let path = sample_env(&ctx.kernel, events.rho, spec.horizon, &mut rng)?;
                let in_a = events.a(&path);
                a_hits += in_a as u64;
                let w = chain_weight(&ctx.trans, &tau, &path)?;
                wsum.push(w, if in_a { 0.0 } else { 1.0 });
            }
            let inner = wsum.mean();
            if !inner.is_finite() {
                return Err(Error::sampling(format!("inner weights vanished for outer sample {i}")));
            }
            Ok(OuterSample { a_hits, inner, ess: wsum.ess() / cfg.n_inner as f64, in_b: events.b(&tau) })
        })
        .collect::<Result<_>>()?;

    let total = (cfg.n_outer * cfg.n_inner) as f64;
    let p_a = outer.iter().map(|o| o.a_hits).sum::<u64>() as f64 / total;
    let p_a_se = (p_a * (1.0 - p_a) / total).sqrt();
    let inner: Moments = outer.iter().map(|o| o.inner).collect();
    let bc: Moments = outer.iter().map(|o| if o.in_b { 0.0 } else { 1.0 }).collect();
    let ess: Moments = outer.iter().map(|o| o.ess).collect();
    let ess_min = outer.iter().map(|o| o.ess).fold(f64::INFINITY, f64::min);
    let collapsed = outer.iter().filter(|o| o.ess < cfg.ess_floor).count();

    let params = [("T", spec.horizon), ("r", r), ("s", s), ("rho", events.rho), ("beta", events.beta)];
    let mut report = StatReport::new(format!("ε-good probe, regime {}", spec.regime.name()));
    report.push(StatRow::new(&params, "P(A)", p_a, p_a_se, total as u64));
    report.push(StatRow::new(&params, "Q[P_tau(A^c)]", inner.mean, inner.stderr(), cfg.n_outer as u64));
    report.push(StatRow::new(&params, "Q(B^c)", bc.mean, bc.stderr(), cfg.n_outer as u64));
    report.push(StatRow::new(&params, "ess_fraction_mean", ess.mean, ess.stderr(), cfg.n_outer as u64));
    report.push(StatRow::new(&params, "ess_fraction_min", ess_min, 0.0, cfg.n_outer as u64));
    Ok(ProbeReport {
        p_a,
        p_a_se,
        q_ac: inner.mean,
        q_ac_se: inner.stderr(),
        q_bc: bc.mean,
        q_bc_se: bc.stderr(),
        ess_min,
        ess_mean: ess.mean,
        collapsed,
        n_outer: cfg.n_outer,
        n_inner: cfg.n_inner,
        report,
    })
}

/// `β` from the proof recipes: `β₀ + c₁(ρ/C₀)^{1/(2-ν)}` below `γ = 2/3`,
/// `β₀ + c₁/ψ^{-1}(C₀/ρ)` at `γ = 2/3`, `β₀` for the criticality events.
pub fn regime_beta(ctx: &Context, regime: Regime, rho: f64, c1: f64, c0: f64) -> Result<f64> {
    if !(rho > 0.0 && c1 > 0.0 && c0 > 0.0) {
        return Err(Error::invalid("regime_beta needs ρ, c₁, C₀ > 0"));
    }
    let b0 = ctx.beta0();
    match regime {
        Regime::SubTwoThirds => {
            let nu = (1.0 / ctx.model.alpha()).max(1.0);
            if nu >= 2.0 {
                return Err(Error::invalid("the sub-2/3 recipe needs ν < 2"));
            }
            Ok(b0 + c1 * (rho / c0).powf(1.0 / (2.0 - nu)))
        }
        Regime::Marginal => Ok(b0 + c1 / marginal::psi_inverse(ctx, c0 / rho)?),
        Regime::Criticality => Ok(b0),
        Regime::TruncatedFenergy | Regime::LargeRho => {
            Err(Error::invalid(format!("no β recipe for regime {}", regime.name())))
        }
    }
}

/// `Q(D_k) = Q(τ₁ ≤ 2^{k+1} | τ₁ ≥ 2^k)` under the critical renewal.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DkRow {
    pub k: u32,
    pub exact: f64,
    pub mc: f64,
    pub mc_se: f64,
    pub conditioned: u64,
    pub limit: f64,
}

pub fn dk_frequencies(ctx: &Context, ks: std::ops::RangeInclusive<u32>, samples: usize, seed: u64) -> Result<Vec<DkRow>> {
    let model = &ctx.model;
    let sampler = model.kbeta_sampler(ctx.beta0())?;
    let draws: Vec<f64> = {
        let mut rng = stream(seed, 0);
        (0..samples).map(|_| sampler.sample(&mut rng)).collect()
    };
    let tail = |t: f64| model.integrate_p0(|_| 1.0, t, f64::INFINITY);
    let limit = 1.0 - 2f64.powf(-model.alpha());
    Ok(ks
        .map(|k| {
            let (lo, hi) = (2f64.powi(k as i32), 2f64.powi(k as i32 + 1));
            let exact = 1.0 - tail(hi) / tail(lo);
            let cond: Vec<bool> = draws.iter().filter(|&&t| t >= lo).map(|&t| t <= hi).collect();
            let m = cond.len() as f64;
            let mc = cond.iter().filter(|&&x| x).count() as f64 / m;
            DkRow { k, exact, mc, mc_se: (mc * (1.0 - mc) / m).sqrt(), conditioned: cond.len() as u64, limit }
        })
        .collect())
}

/// Empirical `P(X - λ ≤ -t)` for `X ~ Poisson(λ)` next to `e^{-t²/(4λ)}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PoissonDeviation {
    pub lambda: f64,
    pub t: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub bound: f64,
}

pub fn poisson_lower_deviation<R: Rng + ?Sized>(lambda: f64, t: f64, draws: usize, rng: &mut R) -> Result<PoissonDeviation> {
    let d = Poisson::new(lambda).map_err(|e| Error::invalid(format!("poisson mean {lambda}: {e}")))?;
    let hits = (0..draws).filter(|_| d.sample(rng) - lambda <= -t).count();
    let p = hits as f64 / draws as f64;
    Ok(PoissonDeviation {
        lambda,
        t,
        empirical: p,
        stderr: (p * (1.0 - p) / draws as f64).sqrt(),
        bound: (-t * t / (4.0 * lambda)).exp(),
    })
}

/// `P_τ(Y_t = 0 ∀ t ∈ τ)`: closed form, block-sampler estimate and the
/// no-jump lower bound `e^{-(1-ρ)s}`.
#[derive(Debug, Clone, Serialize)]
pub struct PinnedCheck {
    pub s: f64,
    pub rho: f64,
    pub contacts: usize,
    pub exact: f64,
    pub mc: f64,
    pub mc_se: f64,
    pub bound: f64,
}

pub fn pinned_check(ctx: &Context, rho: f64, beta: f64, s: f64, step: f64, samples: usize, seed: u64) -> Result<PinnedCheck> {
    let renewal = DiscreteRenewal::new(&ctx.model, beta, s, step)?;
    let n = renewal.len() - 1;
    let h = s / n as f64;
    let mut rng = stream(seed, 0);
    let tau: Vec<f64> = BridgeSampler::new(&renewal).sample(n, &mut rng).into_iter().map(|k| k as f64 * h).collect();
    let exact: f64 = tau
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            ctx.p0(rho * d) * ctx.p0((1.0 - rho) * d) / ctx.p0(d)
        })
        .product();
    let hits: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = stream(seed, 1 + i as u64);
            let path = size_biased_blocks(&ctx.trans, &tau, rho, &mut rng)?;
            let pinned = tau.iter().all(|&t| path.y_at(t).map_or(false, |y| y == 0));
            Ok(if pinned { 1.0 } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    let m: Moments = hits.into_iter().collect();
    Ok(PinnedCheck {
        s,
        rho,
        contacts: tau.len() - 1,
        exact,
        mc: m.mean,
        mc_se: m.stderr(),
        bound: (-(1.0 - rho) * s).exp(),
    })
}

/// Per-block Hölder factor `E[g^{-q}]^{1-θ}` with `q = θ/(1-θ)`,
/// `g = 1_{𝒜^∁} + η 1_𝒜` and `η = P(𝒜)^{1/q}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HolderMass {
    pub theta: f64,
    pub p_a: f64,
    pub eta: f64,
    pub mass: f64,
    /// `(P(𝒜^∁) + 1)^{1-θ}`.
    pub closed_form: f64,
}

pub fn holder_mass(p_a: f64, theta: f64) -> Result<HolderMass> {
    if !(theta > 0.0 && theta < 1.0) || !(0.0..=1.0).contains(&p_a) {
        return Err(Error::invalid("holder_mass needs θ ∈ (0,1) and P(A) ∈ [0,1]"));
    }
    let q = theta / (1.0 - theta);
    let eta = p_a.powf(1.0 / q);
    let on_a = if p_a > 0.0 { p_a * eta.powf(-q) } else { 0.0 };
    let mass = ((1.0 - p_a) + on_a).powf(1.0 - theta);
    let closed_form = ((1.0 - p_a) + if p_a > 0.0 { 1.0 } else { 0.0 }).powf(1.0 - theta);
    Ok(HolderMass { theta, p_a, eta, mass, closed_form })
}

/// `sup_r K(r/2)/K(r)` over a log grid, with the large-`r` limit `2^{1+α}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeightConstant {
    pub sup: f64,
    pub argmax: f64,
    pub limit: f64,
}

pub fn weight_factor_constant(ctx: &Context) -> WeightConstant {
    let mut best = (1.0, 0.0);
    let mut r = 1e-3;
    while r <= 1e9 {
        let q = ctx.p0(0.5 * r) / ctx.p0(r);
        if q > best.0 {
            best = (q, r);
        }
        r *= 1.05;
    }
    let limit = 2f64.powf(1.0 + ctx.model.alpha());
    WeightConstant { sup: best.0.max(limit), argmax: if limit > best.0 { f64::INFINITY } else { best.1 }, limit }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::mecke::count_mean;
    use crate::analysis::testing::ctx;

    fn spec(regime: Regime, t: f64) -> EventSpec {
        EventSpec::new(regime, EventParams::default(), t, (0.0, t)).unwrap()
    }

    #[test]
    fn regime_names_round_trip_and_unknown_is_rejected() {
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        }
        assert!("sub_two_third".parse::<Regime>().is_err());
    }

    #[test]
    fn window_is_validated() {
        let p = EventParams::default();
        assert!(EventSpec::new(Regime::Marginal, p, 10.0, (2.0, 2.0)).is_err());
        assert!(EventSpec::new(Regime::Marginal, p, 10.0, (0.0, 11.0)).is_err());
        let s = EventSpec::new(Regime::Marginal, p, 10.0, (3.0, 4.0)).unwrap();
        assert!(!s.probe_window_ok());
        assert!(EventSpec::new(Regime::Marginal, p, 10.0, (3.0, 5.0)).unwrap().probe_window_ok());
    }

    #[test]
    fn jump_count_mean_is_thinned_poisson() {
        let c = ctx(0.75, -1.0);
        let (rho, t, thr) = (0.4, 30.0, 5.0);
        let mut rng = stream(3, 0);
        let mut all = Moments::default();
        let mut big = Moments::default();
        for _ in 0..20_000 {
            let p = sample_env(&c.kernel, rho, t, &mut rng).unwrap();
            assert_eq!(jump_count(&p, 0.0, t, 0.0), p.len() as u64);
            all.push(jump_count(&p, 0.0, t, 0.0) as f64);
            big.push(jump_count(&p, 0.0, t, thr) as f64);
        }
        assert!((all.mean - rho * t).abs() < 4.0 * all.stderr());
        let m = count_mean(&c, rho, t, thr);
        assert!((big.mean - m).abs() < 4.0 * big.stderr(), "{} {m}", big.mean);
    }

    #[test]
    fn criticality_stat_mean_and_log_growth() {
        let c = ctx(0.75, -1.0);
        assert_eq!(criticality_stat(&EnvPath::constant(0.5, 10.0, 0), 0.0, 10.0, &c), 0);
        let (rho, t) = (0.5, 100.0);
        let mut rng = stream(4, 0);
        let m: Moments = (0..20_000)
            .map(|_| criticality_stat(&sample_env(&c.kernel, rho, t, &mut rng).unwrap(), 0.0, t, &c) as f64)
            .collect();
        let exact = criticality_mean(&c, rho, 0.0, t, None);
        assert!((m.mean - exact).abs() < 4.0 * m.stderr(), "{} {exact}", m.mean);
        let ts = [1e2, 1e3, 1e4];
        let xs: Vec<f64> = ts.iter().map(|t: &f64| t.ln()).collect();
        let ys: Vec<f64> = ts.iter().map(|&t| criticality_mean(&c, rho, 0.0, t, None)).collect();
        let fit = crate::stats::regress(&xs, &ys);
        assert!(fit.r2 >= 0.99 && fit.slope > 0.0, "{fit:?}");
    }

    #[test]
    fn empty_contact_sets_are_never_in_b() {
        let c = ctx(2.0 / 3.0, -1.0);
        let beta = 1.2 * c.beta0();
        for r in Regime::ALL {
            let ev = EventSet::new(&c, spec(r, 50.0), 0.3, beta).unwrap();
            assert!(!ev.b(&[]));
            assert!(!ev.b(&[0.0]));
        }
    }

    #[test]
    fn thresholds_are_reproducible() {
        let c = ctx(2.0 / 3.0, -1.0);
        let beta = 1.2 * c.beta0();
        for r in Regime::ALL {
            let a = EventSet::new(&c, spec(r, 50.0), 0.3, beta).unwrap();
            let b = EventSet::new(&c, spec(r, 50.0), 0.3, beta).unwrap();
            assert_eq!(format!("{:?}", a.kind), format!("{:?}", b.kind));
        }
    }

    #[test]
    fn b_is_typical_for_single_gap_counts() {
        let c = ctx(0.75, -1.0);
        let eps = 0.2f64;
        let params = EventParams { r: eps.powi(-5), epsilon: eps, ..Default::default() };
        let t = 200.0;
        let ev = EventSet::new(&c, EventSpec::new(Regime::LargeRho, params, t, (0.0, t)).unwrap(), 0.5, c.beta0()).unwrap();
        let renewal = DiscreteRenewal::new(&c.model, c.beta0(), t, 0.1).unwrap();
        let n = renewal.len() - 1;
        let sampler = BridgeSampler::new(&renewal);
        let mut rng = stream(5, 0);
        let m: Moments = (0..2000)
            .map(|_| {
                let tau: Vec<f64> = sampler.sample(n, &mut rng).into_iter().map(|k| k as f64 * 0.1).collect();
                if ev.b(&tau) { 1.0 } else { 0.0 }
            })
            .collect();
        assert!(m.mean >= 1.0 - eps, "Q(B) = {}", m.mean);
    }

    #[test]
    fn dk_frequencies_approach_limit() {
        let c = ctx(0.75, -1.0);
        let rows = dk_frequencies(&c, 5..=12, 400_000, 6).unwrap();
        assert!((rows[0].limit - 0.2063).abs() < 1e-4);
        for r in &rows {
            assert!((r.mc - r.exact).abs() < 4.0 * r.mc_se + 1e-3, "{r:?}");
        }
        let last = rows.last().unwrap();
        assert!((last.exact - last.limit).abs() < 0.01, "{last:?}");
    }

    #[test]
    fn poisson_lower_deviation_respects_bound() {
        let mut rng = stream(7, 0);
        let d = poisson_lower_deviation(100.0, 30.0, 1_000_000, &mut rng).unwrap();
        assert!(d.empirical <= d.bound, "{d:?}");
    }

    #[test]
    fn pinned_probability_bound() {
        let c = ctx(0.75, -1.0);
        let chk = pinned_check(&c, 0.95, c.beta0(), 20.0, 0.1, 20_000, 8).unwrap();
        assert!(chk.exact >= chk.bound, "{chk:?}");
        assert!((chk.mc - chk.exact).abs() < 4.0 * chk.mc_se, "{chk:?}");
        assert!(chk.mc + 3.0 * chk.mc_se >= chk.bound);
    }

    #[test]
    fn holder_mass_identity() {
        for &p in &[0.0, 1e-6, 0.04, 0.5, 1.0] {
            for &th in &[0.2, 0.5, 0.8] {
                let h = holder_mass(p, th).unwrap();
                assert!((h.mass - h.closed_form).abs() < 1e-12 && h.mass <= 2.0 + 1e-12, "{h:?}");
            }
        }
    }

    #[test]
    fn weight_constant_is_finite_and_at_least_limit() {
        let c = ctx(0.75, -1.0);
        let w = weight_factor_constant(&c);
        assert!(w.sup.is_finite() && w.sup >= 1.0 && w.sup >= w.limit - 1e-12);
        assert!((w.limit - 2f64.powf(4.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn regime_beta_placement() {
        let c = ctx(0.4, -1.0);
        let b = regime_beta(&c, Regime::SubTwoThirds, 0.5, 0.5, 10.0).unwrap();
        assert!((b - c.beta0() - 0.5 * 0.05).abs() < 1e-12);
        assert!(regime_beta(&c, Regime::LargeRho, 0.5, 0.5, 10.0).is_err());
    }

    #[test]
    fn probe_without_disorder_has_unit_weights() {
        let c = ctx(0.4, -1.0);
        let beta = regime_beta(&c, Regime::SubTwoThirds, 0.5, 0.5, 10.0).unwrap();
        let t = 40.0;
        let sp = EventSpec::new(Regime::SubTwoThirds, EventParams::default(), t, (0.0, 10.0)).unwrap();
        let ev = EventSet::new(&c, sp, 0.0, beta).unwrap();
        let cfg = ProbeConfig { n_outer: 20, n_inner: 50, step: 0.1, ess_floor: 0.1, seed: 9 };
        let rep = epsilon_good_probe(&ev, &cfg).unwrap();
        assert!((rep.ess_min - 1.0).abs() < 1e-12);
        assert!((rep.q_ac - (1.0 - rep.p_a)).abs() < 1e-12);
    }
}
