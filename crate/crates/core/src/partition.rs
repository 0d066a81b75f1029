//! Quenched partition functions for a fixed environment.
//!
//! Both engines live on the grid `t = k h`. The constrained partition obeys
//! the last-contact recursion
//! `ζ_n = A_n w(0,n) + Σ_{k=1}^{n-1} B_{n-k} w(k,n) ζ_k`
//! with the trapezoid coefficients of [`DiscreteRenewal`] and
//! `w(k,n) = P(X_{(n-k)h} = Y_{nh} - Y_{kh}) / P(W_{(n-k)h} = 0)`.
//! The Monte Carlo engine samples contact sets from the annealed chain
//! conditioned on `nh ∈ τ` and averages `∏ w`, which estimates the
//! normalized partition `ζ^Y_n / ζ_n` without bias.

use crate::environment::EnvPath;
use crate::error::{Error, Result};
use crate::homogeneous::{log_free_partition, AnnealedModel, DiscreteRenewal};
use crate::spectral::{DisplacementLaw, Transitions};
use crate::stats::Moments;
use rand::Rng;
use serde::Serialize;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Free,
    Constrained,
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Volterra,
    Mc,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PartitionResult {
    pub value: f64,
    pub log_value: f64,
    pub kind: Kind,
    pub method: Method,
    pub stderr: Option<f64>,
    pub grid_step: Option<f64>,
}

impl PartitionResult {
    fn volterra(kind: Kind, log_value: f64, step: f64) -> Self {
        PartitionResult { value: log_value.exp(), log_value, kind, method: Method::Volterra, stderr: None, grid_step: Some(step) }
    }
}

/// Contact set of a renewal trajectory on `[0, T]`.
#[derive(Debug, Clone, Serialize)]
pub struct RenewalTrajectory {
    pub points: Vec<f64>,
    pub beta: f64,
    pub bridge: bool,
}

/// `K_w(s,t,Y) = β₀ P(X_{t-s} = Y_t - Y_s)`.
pub fn kw(trans: &Transitions, model: &AnnealedModel, s: f64, t: f64, path: &EnvPath) -> Result<f64> {
    Ok(model.beta0() * crate::environment::weight(trans, s, t, path)? * trans.curve().p0(t - s))
}

/// Annealed coefficients plus the per-lag displacement laws for one
/// `(β, ρ, h, n)`; reused across environments.
#[derive(Debug)]
pub struct QuenchedSolver {
    renewal: DiscreteRenewal,
    rho: f64,
    laws: Vec<Option<Arc<DisplacementLaw>>>,
    inv_p0: Vec<f64>,
    w_zero: Vec<f64>,
    trans: Arc<Transitions>,
}

impl QuenchedSolver {
    pub fn new(trans: Arc<Transitions>, model: &AnnealedModel, beta: f64, rho: f64, horizon: f64, step: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::invalid(format!("ρ = {rho} outside [0, 1)")));
        }
        let renewal = DiscreteRenewal::new(model, beta, horizon, step)?;
        let n = renewal.len() - 1;
        let curve = trans.curve().clone();
        let mut laws = Vec::with_capacity(n + 1);
        let mut inv_p0 = Vec::with_capacity(n + 1);
        let mut w_zero = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let s = j as f64 * step;
            let p = curve.p0(s);
            inv_p0.push(1.0 / p);
            w_zero.push(curve.p0((1.0 - rho) * s) / p);
            laws.push(if rho > 0.0 && j > 0 { Some(trans.law((1.0 - rho) * s)?) } else { None });
        }
        Ok(QuenchedSolver { renewal, rho, laws, inv_p0, w_zero, trans })
    }

    pub fn steps(&self) -> usize {
        self.renewal.len() - 1
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn step(&self) -> f64 {
        self.renewal.step
    }

    pub fn renewal(&self) -> &DiscreteRenewal {
        &self.renewal
    }

    /// `w` for lag `j` steps and displacement `d`.
    #[inline]
    pub fn w(&self, j: usize, d: i64) -> f64 {
        if d == 0 {
            self.w_zero[j]
        } else {
            match &self.laws[j] {
                Some(law) => law.prob(self.trans.kernel(), d) * self.inv_p0[j],
                None => 0.0,
            }
        }
    }

    /// Tilted `ζ̃^Y_k = e^{-F k h} ζ^Y_{kh}`, `k = 0..=n`, for grid values of `Y`.
    pub fn solve_grid(&self, y: &[i64]) -> Vec<f64> {
        let n = self.steps();
        assert_eq!(y.len(), n + 1, "environment grid length");
        let (a, b) = (&self.renewal.a, &self.renewal.b);
        let mut z = vec![0.0; n + 1];
        z[0] = a[0];
        for m in 1..=n {
            let ym = y[m];
            let mut acc = a[m] * self.w(m, ym - y[0]);
            for k in 1..m {
                let j = m - k;
                acc += b[j] * self.w(j, ym - y[k]) * z[k];
            }
            z[m] = acc;
        }
        z
    }

    /// Quenched partition functions for a path covering `[0, n h]`.
    pub fn solve(&self, path: &EnvPath) -> Result<QuenchedPartition> {
        let n = self.steps();
        let h = self.step();
        if path.horizon < n as f64 * h * (1.0 - 1e-12) {
            return Err(Error::invalid("environment shorter than the time grid"));
        }
        let zeta = self.solve_grid(&path.on_grid(h, n));
        let close = path.jumps().windows(2).filter(|w| w[1].theta - w[0].theta < 2.0 * h).count();
        Ok(QuenchedPartition {
            step: h,
            beta: self.renewal.beta,
            free_energy: self.renewal.free_energy,
            annealed_last: self.renewal.zeta[n],
            zeta,
            close_jumps: close,
        })
    }

    /// Discrete bridge sampler for the annealed chain on this grid.
    pub fn bridge_sampler(&self) -> BridgeSampler<'_> {
        BridgeSampler { r: &self.renewal }
    }

    /// `∏ w(k_{i-1}, k_i)` along a grid contact chain.
    pub fn chain_weight(&self, chain: &[usize], y: &[i64]) -> f64 {
        chain.windows(2).map(|c| self.w(c[1] - c[0], y[c[1]] - y[c[0]])).product()
    }

    /// Monte Carlo estimate of `𝒲 = ζ^Y_n / ζ_n` from `samples` bridge chains.
    pub fn mc_normalized<R: Rng + ?Sized>(&self, path: &EnvPath, samples: usize, rng: &mut R) -> Result<McEstimate> {
        let n = self.steps();
        let y = path.on_grid(self.step(), n);
        let sampler = self.bridge_sampler();
        let mut m = Moments::default();
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for _ in 0..samples {
            let chain = sampler.sample(n, rng);
            let w = self.chain_weight(&chain, &y);
            m.push(w);
            s1 += w;
            s2 += w * w;
        }
        let ess = if s2 > 0.0 { s1 * s1 / s2 } else { 0.0 };
        let result = PartitionResult {
            value: m.mean,
            log_value: m.mean.ln(),
            kind: Kind::Normalized,
            method: Method::Mc,
            stderr: Some(m.stderr()),
            grid_step: Some(self.step()),
        };
        Ok(McEstimate { result, ess_fraction: ess / samples as f64 })
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct McEstimate {
    pub result: PartitionResult,
    /// Kish effective sample size over the number of samples; values below
    /// 1% mean the estimate is dominated by a few chains.
    pub ess_fraction: f64,
}

/// Output of the Volterra engine.
#[derive(Debug, Clone)]
pub struct QuenchedPartition {
    pub step: f64,
    pub beta: f64,
    pub free_energy: f64,
    /// Tilted annealed value `ζ̃_n` on the same grid.
    pub annealed_last: f64,
    /// Tilted constrained partition `ζ̃^Y_k`.
    pub zeta: Vec<f64>,
    /// Consecutive jumps closer than two grid steps; each smooths the path.
    pub close_jumps: usize,
}

impl QuenchedPartition {
    pub fn steps(&self) -> usize {
        self.zeta.len() - 1
    }

    /// `Z^{Y,c}` at the horizon.
    pub fn constrained(&self) -> PartitionResult {
        let n = self.steps();
        let log = self.free_energy * n as f64 * self.step + self.zeta[n].ln();
        PartitionResult::volterra(Kind::Constrained, log, self.step)
    }

    /// `Z^Y = 1 + ∫ ζ`.
    pub fn free(&self) -> PartitionResult {
        PartitionResult::volterra(Kind::Free, log_free_partition(&self.zeta, self.step, self.free_energy, self.steps()), self.step)
    }

    /// `𝒲 = Z^{Y,c} / z^c`.
    pub fn normalized(&self) -> PartitionResult {
        let log = self.zeta[self.steps()].ln() - self.annealed_last.ln();
        PartitionResult::volterra(Kind::Normalized, log, self.step)
    }
}

/// Samples grid contact chains `0 = k_0 < k_1 < … < k_m = n` with probability
/// proportional to `A_{k_1} ∏ B_{k_i - k_{i-1}}`.
#[derive(Debug, Clone, Copy)]
pub struct BridgeSampler<'a> {
    r: &'a DiscreteRenewal,
}

impl<'a> BridgeSampler<'a> {
    pub fn new(r: &'a DiscreteRenewal) -> Self {
        BridgeSampler { r }
    }

    /// Contact indices, starting at 0 and ending at `n`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        let (a, b, v) = (&self.r.a, &self.r.b, &self.r.v);
        let mut chain = vec![0];
        if n == 0 {
            return chain;
        }
        // first gap uses A, later gaps use B; v_m sums the B-chains of length m
        let mut pos = 0;
        let mut first = true;
        while pos < n {
            let m = n - pos;
            let head = if first { a } else { b };
            let total = if first { self.r.zeta[n] } else { v[m] };
            let mut u = rng.gen::<f64>() * total;
            let mut next = n;
            for l in 1..m {
                u -= head[l] * v[m - l];
                if u < 0.0 {
                    next = pos + l;
                    break;
                }
            }
            chain.push(next);
            pos = next;
            first = false;
        }
        chain
    }

    /// Contact times `k h`.
    pub fn trajectory<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> RenewalTrajectory {
        let h = self.r.step;
        RenewalTrajectory {
            points: self.sample(n, rng).into_iter().map(|k| k as f64 * h).collect(),
            beta: self.r.beta,
            bridge: true,
        }
    }
}

/// Bridge trajectory of `Q_{β,T}` on the grid of step `step`.
pub fn renewal_bridge_sampler<R: Rng + ?Sized>(model: &AnnealedModel, beta: f64, horizon: f64, step: f64, rng: &mut R) -> Result<RenewalTrajectory> {
    let r = DiscreteRenewal::new(model, beta, horizon, step)?;
    let n = r.len() - 1;
    Ok(BridgeSampler { r: &r }.trajectory(n, rng))
}

/// One-shot Volterra evaluation.
pub fn volterra_quenched(trans: Arc<Transitions>, model: &AnnealedModel, path: &EnvPath, beta: f64, horizon: f64, step: f64) -> Result<QuenchedPartition> {
    QuenchedSolver::new(trans, model, beta, path.rho, horizon, step)?.solve(path)
}
