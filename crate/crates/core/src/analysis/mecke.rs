//! Closed-form means of jump functionals from Mecke's formula.
//!
//! Under `P` a functional `Σ_i f(U_i) 1{ϑ_i ∈ I}` has mean `ρ |I| Σ_ℓ μ̄(ℓ) f(ℓ)`.
//! Under the law weighted by `w(s,t,Y)` for a block of length `Δ = t - s`
//! containing `I`, each amplitude `ℓ` is reweighted by
//! `(2ℓ+1)^{-1} Σ_{|x| ≤ ℓ} P(W_Δ = x) / P(W_Δ = 0)`.

use super::{p0_inverse_from, Context};
use crate::error::Result;
use crate::kernel::Kernel;
use crate::numeric::Sum;
use crate::spectral::DisplacementLaw;
use std::sync::Arc;

const DIRECT_SUM: u64 = 1 << 18;

/// Centred distribution function of `W_Δ` and the Mecke reweighting factor.
#[derive(Debug, Clone)]
pub struct BlockLaw {
    dt: f64,
    p0: f64,
    law: Arc<DisplacementLaw>,
    kernel: Arc<Kernel>,
    // C(ℓ) = P(|W_Δ| ≤ ℓ)
    cdf: Vec<f64>,
}

impl BlockLaw {
    /// Tabulates `C(ℓ)` for `ℓ ≤ l_max`.
    pub fn new(ctx: &Context, dt: f64, l_max: u64) -> Result<Self> {
        let law = ctx.trans.law(dt)?;
        let p0 = ctx.p0(dt);
        let l_max = l_max.max(1);
        let mut cdf = Vec::with_capacity(l_max as usize + 1);
        let mut acc = Sum::default();
        acc.add(p0);
        cdf.push(acc.value());
        for x in 1..=l_max {
            acc.add(2.0 * law.prob(&ctx.kernel, x as i64));
            cdf.push(acc.value().min(1.0));
        }
        Ok(BlockLaw { dt, p0, law, kernel: ctx.kernel.clone(), cdf })
    }

    pub fn duration(&self) -> f64 {
        self.dt
    }

    /// `C(ℓ)`, continued past the table with the tail shape of `J`.
    pub fn cdf(&self, l: u64) -> f64 {
        let m = (self.cdf.len() - 1) as u64;
        if l <= m {
            return self.cdf[l as usize];
        }
        let out = 1.0 - self.cdf[m as usize];
        1.0 - out * self.kernel.tail_j(l) / self.kernel.tail_j(m)
    }

    /// `C(ℓ) / ((2ℓ+1) P(W_Δ = 0))`, which never exceeds one.
    pub fn factor(&self, l: u64) -> f64 {
        self.cdf(l) / ((2 * l + 1) as f64 * self.p0)
    }

    /// `Σ_{ℓ ≥ L} μ̄(ℓ) · factor(ℓ) = (J(L) C(L) + 2 Σ_{x > L} J(x) P(W_Δ = x)) / P(W_Δ = 0)`.
    pub fn tail_factor_sum(&self, l: u64) -> f64 {
        let k = &self.kernel;
        let mut s = Sum::default();
        s.add(k.j(l as i64) * self.cdf(l));
        let end = (l + 1).max(DIRECT_SUM);
        for x in l + 1..=end {
            s.add(2.0 * k.j(x as i64) * self.law.prob(k, x as i64));
        }
        // beyond `end` the law is proportional to J
        let je = k.j(end as i64);
        let ratio = self.law.prob(k, end as i64) / je;
        s.add(2.0 * ratio * je * je * end as f64 / (1.0 + 2.0 * k.gamma()));
        s.value() / self.p0
    }
}

/// `Σ_{ℓ ≥ L} μ̄(ℓ)` for a real threshold `L`.
pub fn tail_mubar(ctx: &Context, threshold: f64) -> f64 {
    ctx.kernel.tail_mubar_real(threshold)
}

/// Amplitude threshold `β₀ / K(1/F(β)) = 1 / p0(1/F(β))` of the truncated count.
pub fn jump_threshold(ctx: &Context, beta: f64) -> Result<f64> {
    let f = ctx.model.free_energy(beta)?;
    Ok(1.0 / ctx.p0(1.0 / f))
}

/// `f(β) = Σ_{ℓ ≥ β₀/K(1/F(β))} μ̄(ℓ)`; zero at and below `β₀`.
pub fn f_beta(ctx: &Context, beta: f64) -> Result<f64> {
    if ctx.model.free_energy(beta)? == 0.0 {
        return Ok(0.0);
    }
    Ok(tail_mubar(ctx, jump_threshold(ctx, beta)?))
}

/// `E[#{i : ϑ_i ∈ (0,t], U_i ≥ L}] = ρ t Σ_{ℓ ≥ L} μ̄(ℓ)`.
pub fn count_mean(ctx: &Context, rho: f64, t: f64, threshold: f64) -> f64 {
    rho * t * tail_mubar(ctx, threshold)
}

/// Same count under the law weighted by `w(0,t,Y)`.
pub fn count_mean_weighted(ctx: &Context, rho: f64, t: f64, threshold: f64) -> Result<f64> {
    let l = threshold.max(0.0).ceil() as u64;
    let block = BlockLaw::new(ctx, t, l.min(DIRECT_SUM))?;
    Ok(rho * t * block.tail_factor_sum(l))
}

/// `ρ |I| Σ_{ℓ = lo}^{hi} μ̄(ℓ) f(ℓ) g(ℓ)` with `g = factor` of `block` or one.
pub fn amplitude_mean<F: Fn(u64) -> f64>(ctx: &Context, rho: f64, len: f64, lo: u64, hi: u64, f: F, block: Option<&BlockLaw>) -> f64 {
    let mut s = Sum::default();
    for l in lo..=hi {
        let g = block.map_or(1.0, |b| b.factor(l));
        s.add(ctx.kernel.mubar(l) * f(l) * g);
    }
    rho * len * s.value()
}

/// Mean of `F_{(a,b]} = #{i : ϑ_i ∈ (a,b], U_i K(ϑ_i) ≥ β₀}`, under `P`
/// or, with `block`, under the weighted law of the block containing `(a,b]`.
///
/// Swapping sum and integral, amplitude `ℓ` is counted on
/// `(a, b] ∩ [0, θ*(ℓ)]` with `θ*(ℓ) = sup{θ : p0(θ) ≥ 1/ℓ}`.
pub fn criticality_mean(ctx: &Context, rho: f64, a: f64, b: f64, block: Option<&BlockLaw>) -> f64 {
    let curve = ctx.curve();
    let l_b = (1.0 / curve.p0(b)).ceil() as u64;
    let mut s = Sum::default();
    let mut theta = 0.0;
    for l in 2..l_b {
        theta = p0_inverse_from(curve, 1.0 / l as f64, theta);
        let len = theta.min(b) - a;
        if len > 0.0 {
            let g = block.map_or(1.0, |bl| bl.factor(l));
            s.add(ctx.kernel.mubar(l) * g * len);
        }
    }
    let tail = match block {
        Some(bl) => bl.tail_factor_sum(l_b),
        None => ctx.kernel.tail_mubar(l_b),
    };
    s.add((b - a) * tail);
    rho * s.value()
}

/// Mean of `Σ ξ(U_i) 1{U_i ≤ M}` over a window of length `len`.
pub fn xi_mean(ctx: &Context, rho: f64, len: f64, cutoff: u64, xi: impl Fn(u64) -> f64, block: Option<&BlockLaw>) -> f64 {
    amplitude_mean(ctx, rho, len, 1, cutoff, xi, block)
}

/// `E[J^β] - E_t[J^β]` and `½ ρ f(β) t` for the truncated count on `(0, t]`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ShiftCheck {
    pub t: f64,
    pub plain: f64,
    pub weighted: f64,
    pub bound: f64,
}

impl ShiftCheck {
    pub fn holds(&self) -> bool {
        self.plain - self.weighted >= self.bound
    }
}

pub fn shift_check(ctx: &Context, rho: f64, beta: f64, t: f64) -> Result<ShiftCheck> {
    let thr = jump_threshold(ctx, beta)?;
    let plain = count_mean(ctx, rho, t, thr);
    let weighted = count_mean_weighted(ctx, rho, t, thr)?;
    Ok(ShiftCheck { t, plain, weighted, bound: 0.5 * rho * f_beta(ctx, beta)? * t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::testing::ctx;
    use crate::environment::{sample_env, weight};
    use crate::rng::stream;
    use crate::stats::{Moments, Weighted};

    #[test]
    fn factor_is_at_most_one_and_tail_form_agrees() {
        let c = ctx(0.75, -1.0);
        let b = BlockLaw::new(&c, 6.0, 5000).unwrap();
        for l in [0u64, 1, 3, 10, 100, 4000] {
            assert!(b.factor(l) <= 1.0 + 1e-9, "{l}");
        }
        // summation by parts against the direct sum over a finite range
        let l0 = 3;
        let hi = 5000;
        let direct: f64 = (l0..=hi).map(|l| c.kernel.mubar(l) * b.factor(l)).sum();
        let by_parts = b.tail_factor_sum(l0) - b.tail_factor_sum(hi + 1);
        assert!((direct / by_parts - 1.0).abs() < 1e-9, "{direct} {by_parts}");
    }

    #[test]
    fn f_beta_vanishes_at_beta0_and_matches_direct_sum() {
        let c = ctx(0.75, -1.0);
        assert_eq!(f_beta(&c, c.beta0()).unwrap(), 0.0);
        let beta = 1.5 * c.beta0();
        let thr = jump_threshold(&c, beta).unwrap().ceil() as u64;
        assert!(thr < 1 << 16, "{thr}");
        // brute-force μ̄ sum, then the J tail identity for the remainder past the table
        let cap = 1u64 << 16;
        let mut s = Sum::default();
        for l in thr..cap {
            s.add(c.kernel.mubar_values()[l as usize]);
        }
        s.add((2 * cap + 1) as f64 * c.kernel.j(cap as i64) + 2.0 * c.kernel.tail_j(cap));
        assert!((f_beta(&c, beta).unwrap() - s.value()).abs() < 1e-10);
    }

    #[test]
    fn f_beta_is_comparable_to_free_energy() {
        let c = ctx(0.75, -1.0);
        for i in 1..10 {
            let beta = c.beta0() * (1.0 + 0.1 * i as f64);
            let r = f_beta(&c, beta).unwrap() / c.model.free_energy(beta).unwrap();
            assert!(r > 0.02 && r < 50.0, "{r}");
        }
    }

    #[test]
    fn shift_bound_below_correlation_length() {
        let c = ctx(0.75, -1.0);
        for &r in &[0.05, 0.3, 0.9] {
            let beta = c.beta0() * (1.0 + r);
            let f = c.model.free_energy(beta).unwrap();
            for &frac in &[0.1, 0.5, 1.0] {
                for &rho in &[0.1, 0.5] {
                    let s = shift_check(&c, rho, beta, frac / f).unwrap();
                    assert!(s.holds(), "{s:?}");
                    assert!(s.weighted <= 0.5 * s.plain);
                }
            }
        }
    }

    #[test]
    fn criticality_mean_is_a_time_integral() {
        // ρ ∫_0^T Σ_{ℓ ≥ 1/p0(t)} μ̄(ℓ) dt by plain quadrature on a fine grid
        let c = ctx(0.75, -1.0);
        let t_end = 20.0;
        let n = 200_000;
        let h = t_end / n as f64;
        let mut q = Sum::default();
        for i in 0..n {
            let t = (i as f64 + 0.5) * h;
            q.add(h * c.kernel.tail_mubar_real(1.0 / c.p0(t)));
        }
        let m = criticality_mean(&c, 0.4, 0.0, t_end, None);
        assert!((m / (0.4 * q.value()) - 1.0).abs() < 1e-3, "{m} {}", 0.4 * q.value());
    }

    #[test]
    fn weighted_counts_match_monte_carlo() {
        let c = ctx(0.75, -1.0);
        let (rho, t) = (0.5, 10.0);
        let thr = 4.0;
        let crit_w = criticality_mean(&c, rho, 0.0, t, Some(&BlockLaw::new(&c, t, 1 << 12).unwrap()));
        let cnt_w = count_mean_weighted(&c, rho, t, thr).unwrap();
        let mut rng = stream(1, 0);
        let (mut a, mut b) = (Weighted::default(), Weighted::default());
        let mut plain = Moments::default();
        for _ in 0..100_000 {
            let p = sample_env(&c.kernel, rho, t, &mut rng).unwrap();
            let w = weight(&c.trans, 0.0, t, &p).unwrap();
            let f = p.jumps().iter().filter(|j| j.u as f64 * c.p0(j.theta) >= 1.0).count() as f64;
            let n = p.jumps().iter().filter(|j| j.u as f64 >= thr).count() as f64;
            a.push(w, f);
            b.push(w, n);
            plain.push(f);
        }
        assert!((a.mean() - crit_w).abs() < 4.0 * a.stderr(), "{} ± {} vs {crit_w}", a.mean(), a.stderr());
        assert!((b.mean() - cnt_w).abs() < 4.0 * b.stderr(), "{} ± {} vs {cnt_w}", b.mean(), b.stderr());
        let crit = criticality_mean(&c, rho, 0.0, t, None);
        assert!((plain.mean - crit).abs() < 4.0 * plain.stderr());
    }
}
