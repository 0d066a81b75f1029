//! Desk-scale experiments. Every Monte Carlo loop draws sample `i` from
//! `stream(seed, i)`, so results do not depend on the worker count.

use super::events::{self, epsilon_good_probe, regime_beta, EventParams, EventSet, EventSpec, ProbeConfig, ProbeReport, Regime};
use super::marginal::{self, MarginalRow, MarginalWeights};
use super::mecke::{self, BlockLaw};
use super::{Context, StatReport, StatRow};
use crate::environment::{escape_probability, plain_endpoint, sample_bridge, sample_env, bridge_attempt_cap, weight, EnvPath, PlainJumpSampler};
use crate::error::{Error, Result};
use crate::homogeneous::{log_free_partition, DiscreteRenewal};
use crate::numeric::{self, Sum};
use crate::partition::{BridgeSampler, QuenchedSolver};
use crate::rng::{child_seed, stream, Stream};
use crate::stats::{self, Moments, Weighted};
use rayon::prelude::*;
use serde::Serialize;

fn par_samples<T, F>(n: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut Stream) -> Result<T> + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            f(i, &mut rng)
        })
        .collect()
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    quantile_sorted(xs, 0.5)
}

fn quantile_sorted(xs: &[f64], q: f64) -> f64 {
    let pos = q * (xs.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(xs.len() - 1);
    xs[i] + (pos - i as f64) * (xs[j] - xs[i])
}

/// Outcome of a two-sample comparison.
#[derive(Debug, Clone, Serialize)]
pub struct TwoSample {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub report: StatReport,
}

/// `Y_T` from the enriched construction against a plain compound Poisson
/// sum of `J`-distributed steps.
pub fn construction_equivalence(ctx: &Context, rho: f64, horizon: f64, samples: usize, seed: u64) -> Result<TwoSample> {
    let plain = PlainJumpSampler::new(&ctx.kernel);
    let a = par_samples(samples, child_seed(seed, 1), |_, rng| sample_env(&ctx.kernel, rho, horizon, rng)?.y_at(horizon))?;
    let b = par_samples(samples, child_seed(seed, 2), |_, rng| Ok(plain_endpoint(&ctx.kernel, &plain, rho, horizon, rng)))?;
    let (stat, df, p) = stats::two_sample_chi2(&a, &b);
    let params = [("rho", rho), ("T", horizon)];
    let mut report = StatReport::new("enriched and plain constructions give the same law of Y_T");
    report.push(StatRow::new(&params, "chi2", stat, 0.0, df as u64));
    report.push(StatRow::new(&params, "p_value", p, 0.0, 2 * samples as u64));
    Ok(TwoSample { statistic: stat, df, p_value: p, n_a: samples, n_b: samples, report })
}

/// Cells from sorted reference values, pooled until each holds `min_count`.
fn reference_bins(reference: &[i64], min_count: usize) -> Vec<i64> {
    let mut sorted = reference.to_vec();
    sorted.sort_unstable();
    // upper edges (inclusive); the last cell is open
    let mut edges = Vec::new();
    let mut count = 0;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        while i < sorted.len() && sorted[i] == v {
            count += 1;
            i += 1;
        }
        if count >= min_count && sorted.len() - i >= min_count {
            edges.push(v);
            count = 0;
        }
    }
    edges
}

fn bin_of(edges: &[i64], y: i64) -> usize {
    edges.partition_point(|&e| e < y)
}

/// Weighted law of `Y_t` under `w(0,t,·)` against `W_{ρt}` for a rate-one
/// bridge of duration `t`.
pub fn size_biased_marginal(ctx: &Context, rho: f64, t: f64, samples: usize, seed: u64) -> Result<TwoSample> {
    let weighted = par_samples(samples, child_seed(seed, 1), |_, rng| {
        let p = sample_env(&ctx.kernel, rho, t, rng)?;
        Ok((weight(&ctx.trans, 0.0, t, &p)?, p.y_at(t)?))
    })?;
    let cap = bridge_attempt_cap(&ctx.trans, t);
    let bridge = par_samples(samples, child_seed(seed, 2), |_, rng| {
        let b = sample_bridge(&ctx.kernel, t, rng, cap)?;
        Ok(b.jumps.iter().filter(|j| j.theta <= rho * t).map(|j| j.v).sum::<i64>())
    })?;
    let edges = reference_bins(&bridge, 25);
    let cells = edges.len() + 1;
    let mut counts = vec![0.0; cells];
    for &y in &bridge {
        counts[bin_of(&edges, y)] += 1.0;
    }
    let mut mass = vec![Sum::default(); cells];
    let (mut sw, mut sw2) = (0.0, 0.0);
    for &(w, y) in &weighted {
        mass[bin_of(&edges, y)].add(w);
        sw += w;
        sw2 += w * w;
    }
    let wfrac: Vec<f64> = mass.iter().map(|m| m.value() / sw).collect();
    let ess = sw * sw / sw2;
    let (stat, df, p) = stats::weighted_vs_plain_chi2(&wfrac, ess, &counts);
    let params = [("rho", rho), ("t", t)];
    let mut report = StatReport::new("block description of the size-biased environment");
    report.push(StatRow::new(&params, "chi2", stat, 0.0, df as u64));
    report.push(StatRow::new(&params, "p_value", p, 0.0, 2 * samples as u64));
    report.push(StatRow::new(&params, "ess_fraction", ess / samples as f64, 0.0, samples as u64));
    Ok(TwoSample { statistic: stat, df, p_value: p, n_a: samples, n_b: samples, report })
}

/// `Σ_{ℓ ≥ 1} μ̄(ℓ) ξ(ℓ)`: direct sum to `2^20`, then the midpoint
/// integral of the smooth continuation of `μ̄ ξ`.
pub fn xi_series(ctx: &Context) -> f64 {
    let k = &ctx.kernel;
    let phi = k.spec().phi;
    let top = (1u64 << 20).max(k.x_max() as u64 + 1);
    let mut s = Sum::default();
    for l in 1..=top {
        s.add(k.mubar(l) * marginal::xi(&phi, l as f64));
    }
    let a = (top as f64 + 0.5).ln();
    s.add(numeric::integrate(
        |u| {
            let x = u.exp();
            x * k.mubar_real(x) * marginal::xi(&phi, x)
        },
        a,
        a + 200.0,
        0.0,
        1e-12,
    ));
    s.value()
}

/// One functional at one horizon: closed-form plain mean against the
/// self-normalized weighted mean.
#[derive(Debug, Clone, Serialize)]
pub struct DominationRow {
    pub t: f64,
    pub statistic: String,
    pub plain: f64,
    pub weighted: f64,
    pub weighted_se: f64,
    pub ess_fraction: f64,
}

impl DominationRow {
    pub fn holds(&self) -> bool {
        self.weighted <= self.plain + 4.0 * self.weighted_se
    }
}

/// Jump count, count above `threshold`, and `Σ ξ(U_i)` on `(0, t]`.
pub fn domination_report(ctx: &Context, rho: f64, ts: &[f64], threshold: f64, samples: usize, seed: u64) -> Result<(Vec<DominationRow>, StatReport)> {
    let phi = ctx.kernel.spec().phi;
    let xi_mu = xi_series(ctx);
    let mut rows = Vec::new();
    let mut report = StatReport::new("weighted environment is dominated by the plain one");
    for (ti, &t) in ts.iter().enumerate() {
        let draws = par_samples(samples, child_seed(seed, ti as u64), |_, rng| {
            let p = sample_env(&ctx.kernel, rho, t, rng)?;
            let w = weight(&ctx.trans, 0.0, t, &p)?;
            let all = p.len() as f64;
            let big = events::jump_count(&p, 0.0, t, threshold) as f64;
            let xs: f64 = p.jumps().iter().map(|j| marginal::xi(&phi, j.u as f64)).sum();
            Ok((w, [all, big, xs]))
        })?;
        let plain = [rho * t, mecke::count_mean(ctx, rho, t, threshold), rho * t * xi_mu];
        for (k, name) in ["jump_count", "thresholded_count", "xi_sum"].iter().enumerate() {
            let mut acc = Weighted::default();
            for (w, f) in &draws {
                acc.push(*w, f[k]);
            }
            let row = DominationRow {
                t,
                statistic: name.to_string(),
                plain: plain[k],
                weighted: acc.mean(),
                weighted_se: acc.stderr(),
                ess_fraction: acc.ess() / samples as f64,
            };
            let params = [("rho", rho), ("t", t)];
            report.push(StatRow::new(&params, &format!("{name}_plain"), row.plain, 0.0, 0));
            report.push(StatRow::new(&params, &format!("{name}_weighted"), row.weighted, row.weighted_se, samples as u64));
            rows.push(row);
        }
    }
    Ok((rows, report))
}

/// Closed form against weighted Monte Carlo for one statistic.
#[derive(Debug, Clone, Serialize)]
pub struct MeckeRow {
    pub rho: f64,
    pub t: f64,
    pub statistic: String,
    pub closed_form: f64,
    pub mc: f64,
    pub mc_se: f64,
}

impl MeckeRow {
    pub fn agrees(&self) -> bool {
        (self.mc - self.closed_form).abs() <= 4.0 * self.mc_se
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MeckeReport {
    pub rows: Vec<MeckeRow>,
    pub shifts: Vec<mecke::ShiftCheck>,
    pub report: StatReport,
}

/// Weighted means of the thresholded count, of `F_{(0,t]}` and of the
/// amplitude-weighted sum, on a `(ρ, t)` grid; plus the half-mean shift
/// bound for `t ≤ 1/F(β)` over `betas`.
pub fn mecke_report(ctx: &Context, rhos: &[f64], ts: &[f64], threshold: f64, betas: &[f64], samples: usize, seed: u64) -> Result<MeckeReport> {
    let mut rows = Vec::new();
    let mut report = StatReport::new("Mecke closed forms for weighted jump functionals");
    let mut cell = 0u64;
    for &rho in rhos {
        for &t in ts {
            let w = MarginalWeights::new(ctx, t);
            let block = BlockLaw::new(ctx, t, (threshold.ceil() as u64).max(w.cutoff()).max(1 << 12))?;
            let closed = [
                mecke::count_mean_weighted(ctx, rho, t, threshold)?,
                mecke::criticality_mean(ctx, rho, 0.0, t, Some(&block)),
                marginal::marginal_mean(ctx, rho, &w, Some(&block)),
            ];
            let draws = par_samples(samples, child_seed(seed, cell), |_, rng| {
                let p = sample_env(&ctx.kernel, rho, t, rng)?;
                let wt = weight(&ctx.trans, 0.0, t, &p)?;
                Ok((wt, [
                    events::jump_count(&p, 0.0, t, threshold) as f64,
                    events::criticality_stat(&p, 0.0, t, ctx) as f64,
                    marginal::marginal_stat(&p, &w),
                ]))
            })?;
            cell += 1;
            for (k, name) in ["thresholded_count", "criticality_count", "amplitude_sum"].iter().enumerate() {
                let mut acc = Weighted::default();
                for (wt, f) in &draws {
                    acc.push(*wt, f[k]);
                }
                let row = MeckeRow { rho, t, statistic: name.to_string(), closed_form: closed[k], mc: acc.mean(), mc_se: acc.stderr() };
                let params = [("rho", rho), ("t", t)];
                report.push(StatRow::new(&params, &format!("{name}_closed"), row.closed_form, 0.0, 0));
                report.push(StatRow::new(&params, &format!("{name}_mc"), row.mc, row.mc_se, samples as u64));
                rows.push(row);
            }
        }
    }
    let mut shifts = Vec::new();
    for &beta in betas {
        let f = ctx.model.free_energy(beta)?;
        if f == 0.0 {
            return Err(Error::invalid("shift bound needs β > β₀"));
        }
        for &rho in rhos {
            for frac in [0.1, 0.5, 1.0] {
                let s = mecke::shift_check(ctx, rho, beta, frac / f)?;
                let params = [("rho", rho), ("beta", beta), ("t", s.t)];
                report.push(StatRow::new(&params, "shift", s.plain - s.weighted, 0.0, 0));
                report.push(StatRow::new(&params, "shift_bound", s.bound, 0.0, 0));
                shifts.push(s);
            }
        }
    }
    Ok(MeckeReport { rows, shifts, report })
}

/// Configuration of the partition-engine cross-checks.
#[derive(Debug, Clone, Copy)]
pub struct EngineConfig {
    pub rho: f64,
    pub horizon: f64,
    pub step: f64,
    pub environments: usize,
    pub fixed_paths: usize,
    pub chains: usize,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { rho: 0.3, horizon: 30.0, step: 0.1, environments: 10_000, fixed_paths: 20, chains: 20_000, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EngineReport {
    /// `|log Z^{Y,c} - log z^c|` at `ρ = 0`.
    pub no_disorder_error: f64,
    pub mean_normalized: f64,
    pub mean_normalized_se: f64,
    pub mean_log_normalized: f64,
    pub mean_log_normalized_se: f64,
    /// `(Volterra, MC, MC stderr, ESS fraction)` per fixed path.
    pub fixed: Vec<(f64, f64, f64, f64)>,
    pub report: StatReport,
}

impl EngineReport {
    pub fn identity_holds(&self) -> bool {
        (self.mean_normalized - 1.0).abs() <= 4.0 * self.mean_normalized_se
    }

    pub fn engines_agree(&self) -> bool {
        self.fixed.iter().all(|&(v, m, se, _)| (v - m).abs() <= 4.0 * se)
    }
}

/// ρ = 0 reduction, the annealing identity and Volterra against bridge
/// Monte Carlo, all at `β`.
pub fn partition_engines(ctx: &Context, beta: f64, cfg: &EngineConfig) -> Result<EngineReport> {
    let flat = EnvPath::constant(0.0, cfg.horizon, 0);
    let s0 = QuenchedSolver::new(ctx.trans.clone(), &ctx.model, beta, 0.0, cfg.horizon, cfg.step)?;
    let q0 = s0.solve(&flat)?.constrained().log_value;
    let z0 = ctx.model.annealed_partition(beta, cfg.horizon, cfg.step)?.log_constrained;
    let no_disorder_error = (q0 - z0).abs();

    let solver = QuenchedSolver::new(ctx.trans.clone(), &ctx.model, beta, cfg.rho, cfg.horizon, cfg.step)?;
    let w = par_samples(cfg.environments, child_seed(cfg.seed, 1), |_, rng| {
        let p = sample_env(&ctx.kernel, cfg.rho, cfg.horizon, rng)?;
        Ok(solver.solve(&p)?.normalized().log_value)
    })?;
    let lin: Moments = w.iter().map(|l| l.exp()).collect();
    let logs: Moments = w.iter().copied().collect();

    let fixed = par_samples(cfg.fixed_paths, child_seed(cfg.seed, 2), |_, rng| {
        let p = sample_env(&ctx.kernel, cfg.rho, cfg.horizon, rng)?;
        let exact = solver.solve(&p)?.normalized().value;
        let mc = solver.mc_normalized(&p, cfg.chains, rng)?;
        Ok((exact, mc.result.value, mc.result.stderr.unwrap_or(0.0), mc.ess_fraction))
    })?;

    let params = [("rho", cfg.rho), ("T", cfg.horizon), ("beta", beta)];
    let mut report = StatReport::new("annealing identity and agreement of the two partition engines");
    report.push(StatRow::new(&[("T", cfg.horizon)], "abs_log_error_rho0", no_disorder_error, 0.0, 1));
    report.push(StatRow::new(&params, "mean_W", lin.mean, lin.stderr(), lin.n));
    report.push(StatRow::new(&params, "mean_log_W", logs.mean, logs.stderr(), logs.n));
    for (i, &(v, m, se, ess)) in fixed.iter().enumerate() {
        let p = [("path", i as f64), ("rho", cfg.rho), ("T", cfg.horizon)];
        report.push(StatRow::new(&p, "W_volterra", v, 0.0, 1));
        report.push(StatRow::new(&p, "W_mc", m, se, cfg.chains as u64));
        report.push(StatRow::new(&p, "ess_fraction", ess, 0.0, cfg.chains as u64));
    }
    Ok(EngineReport {
        no_disorder_error,
        mean_normalized: lin.mean,
        mean_normalized_se: lin.stderr(),
        mean_log_normalized: logs.mean,
        mean_log_normalized_se: logs.stderr(),
        fixed,
        report,
    })
}

/// Summary of `𝒲_{β₀,T}` at one `(ρ, T)`.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalityRow {
    pub rho: f64,
    pub horizon: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
    pub mean: f64,
    pub mean_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalityReport {
    pub rows: Vec<CriticalityRow>,
    /// `(ρ, slope of log median against log T)`.
    pub slopes: Vec<(f64, f64)>,
    pub report: StatReport,
}

impl CriticalityReport {
    pub fn slope(&self, rho: f64) -> Option<f64> {
        self.slopes.iter().find(|s| s.0 == rho).map(|s| s.1)
    }
}

/// `𝒲_{β₀,T}` for every `T` in `horizons` from one Volterra solve per
/// environment on `[0, max T]`.
pub fn criticality_experiment(ctx: &Context, rhos: &[f64], horizons: &[f64], reps: usize, step: f64, seed: u64) -> Result<CriticalityReport> {
    let t_max = horizons.iter().cloned().fold(0.0, f64::max);
    let idx: Vec<usize> = horizons.iter().map(|&t| (t / step).round() as usize).collect();
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    let mut report = StatReport::new("at the annealed critical point the normalized partition function decays");
    for (ri, &rho) in rhos.iter().enumerate() {
        let solver = QuenchedSolver::new(ctx.trans.clone(), &ctx.model, ctx.beta0(), rho, t_max, step)?;
        let ann = &solver.renewal().zeta;
        let n = solver.steps();
        let draws = par_samples(reps, child_seed(seed, ri as u64), |_, rng| {
            let p = sample_env(&ctx.kernel, rho, t_max, rng)?;
            let z = solver.solve_grid(&p.on_grid(step, n));
            Ok(idx.iter().map(|&k| z[k] / ann[k]).collect::<Vec<f64>>())
        })?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (j, &t) in horizons.iter().enumerate() {
            let mut col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            let m: Moments = col.iter().copied().collect();
            let med = median(&mut col);
            let row = CriticalityRow {
                rho,
                horizon: t,
                median: med,
                q10: quantile_sorted(&col, 0.1),
                q90: quantile_sorted(&col, 0.9),
                mean: m.mean,
                mean_se: m.stderr(),
            };
            let params = [("rho", rho), ("T", t)];
            report.push(StatRow::new(&params, "median_W", row.median, 0.0, reps as u64));
            report.push(StatRow::new(&params, "q10_W", row.q10, 0.0, reps as u64));
            report.push(StatRow::new(&params, "q90_W", row.q90, 0.0, reps as u64));
            report.push(StatRow::new(&params, "mean_W", row.mean, row.mean_se, reps as u64));
            xs.push(t.ln());
            ys.push(med.ln());
            rows.push(row);
        }
        let slope = stats::linear_fit(&xs, &ys).0;
        report.push(StatRow::new(&[("rho", rho)], "slope_log_median", slope, 0.0, reps as u64));
        slopes.push((rho, slope));
    }
    Ok(CriticalityReport { rows, slopes, report })
}

#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    pub beta: f64,
    pub free_energy: f64,
    pub horizon: f64,
    pub mean_min: f64,
    pub mean_min_se: f64,
    /// `(1/T) log E[1 ∧ 𝒲]`.
    pub rate: f64,
    pub rate_se: f64,
    pub mean_w: f64,
    pub mean_w_se: f64,
    pub mean_max: f64,
    pub mean_max_se: f64,
}

impl GapRow {
    pub fn negative_at(&self, sigmas: f64) -> bool {
        self.rate + sigmas * self.rate_se < 0.0
    }

    pub fn martingale_ok(&self) -> bool {
        (self.mean_w - 1.0).abs() <= 4.0 * self.mean_w_se
    }
}

/// `(1/T) log E[1 ∧ 𝒲_{β,T}]` at `T = products[i] / F(β)`, one row per
/// entry of `betas`.
pub fn irrelevance_gap(ctx: &Context, rho: f64, betas: &[f64], horizons: &[f64], reps: usize, step: f64, seed: u64) -> Result<(Vec<GapRow>, StatReport)> {
    if betas.len() != horizons.len() {
        return Err(Error::invalid("one horizon per β"));
    }
    let mut rows = Vec::new();
    let mut report = StatReport::new("irrelevance gap: E[1 ∧ W] decays exponentially above β₀");
    for (i, (&beta, &t)) in betas.iter().zip(horizons).enumerate() {
        let solver = QuenchedSolver::new(ctx.trans.clone(), &ctx.model, beta, rho, t, step)?;
        let w = par_samples(reps, child_seed(seed, i as u64), |_, rng| {
            let p = sample_env(&ctx.kernel, rho, t, rng)?;
            Ok(solver.solve(&p)?.normalized().value)
        })?;
        let lo: Moments = w.iter().map(|x| x.min(1.0)).collect();
        let all: Moments = w.iter().copied().collect();
        let hi: Moments = w.iter().map(|x| x.max(1.0)).collect();
        let horizon = solver.steps() as f64 * step;
        let row = GapRow {
            beta,
            free_energy: ctx.model.free_energy(beta)?,
            horizon,
            mean_min: lo.mean,
            mean_min_se: lo.stderr(),
            rate: lo.mean.ln() / horizon,
            rate_se: lo.stderr() / (lo.mean * horizon),
            mean_w: all.mean,
            mean_w_se: all.stderr(),
            mean_max: hi.mean,
            mean_max_se: hi.stderr(),
        };
        let params = [("rho", rho), ("beta", beta), ("T", horizon)];
        report.push(StatRow::new(&params, "rate_log_mean_min", row.rate, row.rate_se, reps as u64));
        report.push(StatRow::new(&params, "rate_over_F", row.rate / row.free_energy, row.rate_se / row.free_energy, reps as u64));
        report.push(StatRow::new(&params, "mean_W", row.mean_w, row.mean_w_se, reps as u64));
        report.push(StatRow::new(&params, "mean_max_W", row.mean_max, row.mean_max_se, reps as u64));
        rows.push(row);
    }
    Ok((rows, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginalReport {
    pub rows: Vec<MarginalRow>,
    /// Slope of `log ψ(T)` against `log log(1/K(T))`.
    pub psi_exponent: f64,
    /// Slope against `log log T`; the additive constant in
    /// `log(1/K(T)) = (3/2) log T + c` biases it at moderate `T`.
    pub psi_exponent_log_t: f64,
    pub psi_r2: f64,
    pub report: StatReport,
}

impl MarginalReport {
    /// `(min, max)` of `Var(F_T)/(ρ T S(T))` over the table.
    pub fn ratio_range(&self) -> (f64, f64) {
        let lo = self.rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
        let hi = self.rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        (lo, hi)
    }
}

/// Variance table of `F_T` and the growth exponent of `ψ`.
pub fn marginal_report(ctx: &Context, rho: f64, horizons: &[f64]) -> MarginalReport {
    let rows = marginal::marginal_table(ctx, rho, horizons);
    let xs: Vec<f64> = horizons.iter().map(|t| t.ln().ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.psi_of_t.ln()).collect();
    let raw = stats::regress(&xs, &ys);
    let fit = marginal::psi_exponent(ctx, horizons);
    let mut report = StatReport::new("variance of the amplitude-weighted count and growth of psi");
    for r in &rows {
        let params = [("rho", rho), ("T", r.horizon)];
        report.push(StatRow::new(&params, "variance", r.variance, 0.0, 0));
        report.push(StatRow::new(&params, "S", r.s_of_t, 0.0, 0));
        report.push(StatRow::new(&params, "psi", r.psi_of_t, 0.0, 0));
        report.push(StatRow::new(&params, "variance_ratio", r.ratio, 0.0, 0));
    }
    report.push(StatRow::new(&[("rho", rho)], "psi_exponent", fit.slope, fit.slope_se, rows.len() as u64));
    report.push(StatRow::new(&[("rho", rho)], "psi_exponent_log_T", raw.slope, raw.slope_se, rows.len() as u64));
    MarginalReport { rows, psi_exponent: fit.slope, psi_exponent_log_t: raw.slope, psi_r2: fit.r2, report }
}

/// Settings for the sub-2/3 probe with `β` from the proof recipe and
/// `T = 1/F(β)`.
#[derive(Debug, Clone, Copy)]
pub struct SubTwoThirdsProbe {
    pub rho: f64,
    pub r: f64,
    pub c1: f64,
    pub c0: f64,
    pub probe: ProbeConfig,
}

impl Default for SubTwoThirdsProbe {
    fn default() -> Self {
        SubTwoThirdsProbe {
            rho: 0.5,
            r: 5.0,
            c1: 0.5,
            c0: 10.0,
            probe: ProbeConfig { n_outer: 200, n_inner: 200, step: 0.1, ess_floor: 0.1, seed: 1 },
        }
    }
}

pub fn sub_two_thirds_probe(ctx: &Context, cfg: &SubTwoThirdsProbe) -> Result<ProbeReport> {
    let beta = regime_beta(ctx, Regime::SubTwoThirds, cfg.rho, cfg.c1, cfg.c0)?;
    let t = 1.0 / ctx.model.free_energy(beta)?;
    let params = EventParams { r: cfg.r, ..EventParams::default() };
    let spec = EventSpec::new(Regime::SubTwoThirds, params, t, (0.0, t))?;
    let set = EventSet::new(ctx, spec, cfg.rho, beta)?;
    epsilon_good_probe(&set, &cfg.probe)
}

/// `θ ∈ (0,1)` with `(1+α)θ > 1`, block length `T = 1/F(β)` and block count.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoarseGrainConfig {
    pub theta: f64,
    pub block_t: f64,
    pub n_blocks: usize,
}

impl CoarseGrainConfig {
    pub const MAX_BLOCKS: usize = 8;
    pub const MAX_HORIZON: f64 = 500.0;

    /// Default `θ = (1+α)^{-1/2}`.
    pub fn new(ctx: &Context, beta: f64, n_blocks: usize) -> Result<Self> {
        let f = ctx.model.free_energy(beta)?;
        if f == 0.0 {
            return Err(Error::invalid("block length 1/F(β) needs β > β₀"));
        }
        Self::with_theta((1.0 + ctx.model.alpha()).powf(-0.5), ctx.model.alpha(), 1.0 / f, n_blocks)
    }

    pub fn with_theta(theta: f64, alpha: f64, block_t: f64, n_blocks: usize) -> Result<Self> {
        if !(theta > 0.0 && theta <= 1.0) || (1.0 + alpha) * theta <= 1.0 {
            return Err(Error::invalid(format!("θ = {theta} violates (1+α)θ > 1 with α = {alpha}")));
        }
        if n_blocks == 0 || n_blocks > Self::MAX_BLOCKS {
            return Err(Error::invalid(format!("n_blocks must lie in 1..={}", Self::MAX_BLOCKS)));
        }
        if !(block_t > 0.0) || block_t * n_blocks as f64 > Self::MAX_HORIZON {
            return Err(Error::invalid(format!(
                "horizon {} exceeds {}",
                block_t * n_blocks as f64,
                Self::MAX_HORIZON
            )));
        }
        Ok(CoarseGrainConfig { theta, block_t, n_blocks })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FracMomentRow {
    pub n: usize,
    pub horizon: f64,
    /// `E[(Z^Y)^θ]`.
    pub moment: f64,
    pub moment_se: f64,
    /// `(z)^θ` for the annealed free partition.
    pub annealed_theta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FracMomentReport {
    pub rows: Vec<FracMomentRow>,
    /// `max/min` of the moment sequence.
    pub spread: f64,
    pub report: StatReport,
}

/// `E[(Z^Y_{β,nT})^θ]` for `n = 1..=n_blocks` by Volterra over `reps`
/// environments on `[0, n_blocks T]`.
pub fn fractional_moment(ctx: &Context, rho: f64, beta: f64, cfg: &CoarseGrainConfig, reps: usize, step: f64, seed: u64) -> Result<FracMomentReport> {
    let horizon = cfg.block_t * cfg.n_blocks as f64;
    let solver = QuenchedSolver::new(ctx.trans.clone(), &ctx.model, beta, rho, horizon, step)?;
    let n = solver.steps();
    let f = solver.renewal().free_energy;
    let idx: Vec<usize> = (1..=cfg.n_blocks).map(|b| ((b as f64 * cfg.block_t / step).round() as usize).min(n)).collect();
    let draws = par_samples(reps, seed, |_, rng| {
        let p = sample_env(&ctx.kernel, rho, horizon, rng)?;
        let z = solver.solve_grid(&p.on_grid(step, n));
        Ok(idx.iter().map(|&k| (cfg.theta * log_free_partition(&z, step, f, k)).exp()).collect::<Vec<f64>>())
    })?;
    let mut rows = Vec::new();
    let mut report = StatReport::new("fractional moment of the free partition function over coarse-grained blocks");
    for (j, &k) in idx.iter().enumerate() {
        let m: Moments = draws.iter().map(|d| d[j]).collect();
        let row = FracMomentRow {
            n: j + 1,
            horizon: k as f64 * step,
            moment: m.mean,
            moment_se: m.stderr(),
            annealed_theta: (cfg.theta * solver.renewal().log_free(k)).exp(),
        };
        let params = [("rho", rho), ("beta", beta), ("theta", cfg.theta), ("n", row.n as f64)];
        report.push(StatRow::new(&params, "frac_moment", row.moment, row.moment_se, reps as u64));
        report.push(StatRow::new(&params, "annealed_theta", row.annealed_theta, 0.0, 0));
        rows.push(row);
    }
    let hi = rows.iter().map(|r| r.moment).fold(0.0, f64::max);
    let lo = rows.iter().map(|r| r.moment).fold(f64::INFINITY, f64::min);
    report.push(StatRow::new(&[("rho", rho), ("beta", beta)], "max_over_min", hi / lo, 0.0, reps as u64));
    Ok(FracMomentReport { rows, spread: hi / lo, report })
}

#[derive(Debug, Clone, Serialize)]
pub struct QuenchedFreeEnergy {
    pub rho: f64,
    pub beta: f64,
    pub annealed: f64,
    /// `(T, mean of (1/T) log Z^Y, stderr)`.
    pub points: Vec<(f64, f64, f64)>,
    pub estimate: f64,
    pub ci: f64,
}

/// Linear extrapolation in `1/T` of `(1/T) E[log Z^Y_{β,T}]`.
pub fn quenched_free_energy(ctx: &Context, rho: f64, beta: f64, horizons: &[f64], reps: usize, step: f64, seed: u64) -> Result<QuenchedFreeEnergy> {
    if horizons.len() < 2 {
        return Err(Error::invalid("extrapolation needs at least two horizons"));
    }
    let t_max = horizons.iter().cloned().fold(0.0, f64::max);
    let solver = QuenchedSolver::new(ctx.trans.clone(), &ctx.model, beta, rho, t_max, step)?;
    let n = solver.steps();
    let f = solver.renewal().free_energy;
    let idx: Vec<usize> = horizons.iter().map(|&t| (t / step).round() as usize).collect();
    let draws = par_samples(reps, seed, |_, rng| {
        let p = sample_env(&ctx.kernel, rho, t_max, rng)?;
        let z = solver.solve_grid(&p.on_grid(step, n));
        Ok(idx.iter().map(|&k| log_free_partition(&z, step, f, k) / (k as f64 * step)).collect::<Vec<f64>>())
    })?;
    let mut points = Vec::new();
    for (j, &k) in idx.iter().enumerate() {
        let m: Moments = draws.iter().map(|d| d[j]).collect();
        points.push((k as f64 * step, m.mean, m.stderr()));
    }
    // intercept of the least-squares line in x = 1/T is Σ c_i y_i
    let xs: Vec<f64> = points.iter().map(|p| 1.0 / p.0).collect();
    let xm = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let c: Vec<f64> = xs.iter().map(|x| 1.0 / xs.len() as f64 - xm * (x - xm) / sxx).collect();
    let estimate: f64 = c.iter().zip(&points).map(|(c, p)| c * p.1).sum();
    let se = c.iter().zip(&points).map(|(c, p)| (c * p.2).powi(2)).sum::<f64>().sqrt();
    Ok(QuenchedFreeEnergy { rho, beta, annealed: ctx.model.free_energy(beta)?, points, estimate, ci: 1.96 * se })
}

/// One block length in the shift report.
#[derive(Debug, Clone, Serialize)]
pub struct ShiftRow {
    pub regime: Regime,
    pub delta: f64,
    pub plain: f64,
    pub weighted: f64,
    /// Shift divided by the bound's scale: `ρΔ` for the jump count,
    /// `ρ ξ(1/K(Δ))` for the amplitude sum, `ρ` for `F`.
    pub ratio: f64,
}

/// Closed-form `E[·] - E_Δ[·]` over a block of length `Δ` for the
/// sub-2/3, marginal and criticality statistics.
pub fn expectation_shift_report(ctx: &Context, rho: f64, regime: Regime, deltas: &[f64]) -> Result<(Vec<ShiftRow>, StatReport)> {
    let phi = ctx.kernel.spec().phi;
    let mut rows = Vec::new();
    let mut report = StatReport::new(format!("expectation shift under the weighted law, regime {}", regime.name()));
    for &d in deltas {
        let (plain, weighted, scale) = match regime {
            Regime::SubTwoThirds => (rho * d, mecke::count_mean_weighted(ctx, rho, d, 0.0)?, rho * d),
            Regime::Marginal => {
                let w = MarginalWeights::new(ctx, d);
                let block = BlockLaw::new(ctx, d, w.cutoff().max(1 << 12))?;
                (marginal::marginal_mean(ctx, rho, &w, None), marginal::marginal_mean(ctx, rho, &w, Some(&block)), rho * marginal::xi(&phi, 1.0 / ctx.k(d)))
            }
            Regime::Criticality => {
                let block = BlockLaw::new(ctx, d, 1 << 12)?;
                (mecke::criticality_mean(ctx, rho, 0.0, d, None), mecke::criticality_mean(ctx, rho, 0.0, d, Some(&block)), rho)
            }
            _ => return Err(Error::invalid(format!("no shift statistic for regime {}", regime.name()))),
        };
        let ratio = if scale > 0.0 { (plain - weighted) / scale } else { 0.0 };
        let params = [("rho", rho), ("delta", d)];
        report.push(StatRow::new(&params, "plain_mean", plain, 0.0, 0));
        report.push(StatRow::new(&params, "weighted_mean", weighted, 0.0, 0));
        report.push(StatRow::new(&params, "shift_ratio", ratio, 0.0, 0));
        rows.push(ShiftRow { regime, delta: d, plain, weighted, ratio });
    }
    Ok((rows, report))
}

/// Endpoint deconditioning: bridge on `[0, 2t]` against the free renewal,
/// for the number of contacts in `(0, t]` and the indicator that at least
/// `t^{α∧1}/R` gaps in `[1, 2]` end in `(0, t]`.
#[derive(Debug, Clone, Serialize)]
pub struct DeconditionRow {
    pub t: f64,
    pub statistic: String,
    pub bridge: f64,
    pub bridge_se: f64,
    pub free: f64,
    pub free_se: f64,
    pub ratio: f64,
}

pub fn deconditioning(ctx: &Context, beta: f64, ts: &[f64], r: f64, samples: usize, step: f64, seed: u64) -> Result<Vec<DeconditionRow>> {
    let alpha = ctx.model.alpha().min(1.0);
    let free_sampler = ctx.model.kbeta_sampler(beta)?;
    let stats_of = |tau: &[f64], t: f64| -> [f64; 2] {
        let mut contacts = 0.0;
        let mut gaps = 0.0;
        for w in tau.windows(2) {
            if w[1] > t {
                break;
            }
            contacts += 1.0;
            gaps += ((1.0..=2.0).contains(&(w[1] - w[0]))) as u8 as f64;
        }
        [contacts, (gaps >= t.powf(alpha) / r) as u8 as f64]
    };
    let mut rows = Vec::new();
    for (i, &t) in ts.iter().enumerate() {
        let renewal = DiscreteRenewal::new(&ctx.model, beta, 2.0 * t, step)?;
        let n = renewal.len() - 1;
        let h = 2.0 * t / n as f64;
        let sampler = BridgeSampler::new(&renewal);
        let bridged = par_samples(samples, child_seed(seed, 2 * i as u64), |_, rng| {
            let tau: Vec<f64> = sampler.sample(n, rng).into_iter().map(|k| k as f64 * h).collect();
            Ok(stats_of(&tau, t))
        })?;
        let free = par_samples(samples, child_seed(seed, 2 * i as u64 + 1), |_, rng| {
            let mut tau = vec![0.0];
            let mut x = 0.0;
            while x <= t {
                x += free_sampler.sample(rng);
                tau.push(x);
            }
            Ok(stats_of(&tau, t))
        })?;
        for (k, name) in ["contacts", "gap_event"].iter().enumerate() {
            let b: Moments = bridged.iter().map(|s| s[k]).collect();
            let f: Moments = free.iter().map(|s| s[k]).collect();
            rows.push(DeconditionRow {
                t,
                statistic: name.to_string(),
                bridge: b.mean,
                bridge_se: b.stderr(),
                free: f.mean,
                free_se: f.stderr(),
                ratio: b.mean / f.mean,
            });
        }
    }
    Ok(rows)
}

/// Exponential tail of the local time at the origin.
#[derive(Debug, Clone, Serialize)]
pub struct LocalTimeTail {
    pub rho: f64,
    pub horizon: f64,
    /// Maximum-likelihood rate `1 / mean L_T(0)`.
    pub rate: f64,
    pub rate_se: f64,
    pub p_escape: f64,
    pub p_escape_se: f64,
    /// Escape estimate with a quarter of the step cutoff; the difference to
    /// `p_escape` indicates the truncation bias.
    pub p_escape_short: f64,
    /// `(s, empirical P(L ≥ s), e^{-rate s})`.
    pub survival: Vec<(f64, f64, f64)>,
}

impl LocalTimeTail {
    pub fn predicted_rate(&self) -> f64 {
        self.rho * self.p_escape
    }
}

pub fn local_time_tail(ctx: &Context, rho: f64, horizon: f64, samples: usize, escape_steps: usize, escape_samples: usize, seed: u64) -> Result<LocalTimeTail> {
    let l0 = par_samples(samples, child_seed(seed, 1), |_, rng| {
        let p = sample_env(&ctx.kernel, rho, horizon, rng)?;
        Ok(p.local_times().get(&0).copied().unwrap_or(0.0))
    })?;
    let m: Moments = l0.iter().copied().collect();
    let rate = 1.0 / m.mean;
    let rate_se = rate * m.stderr() / m.mean;
    let chunks = 16usize;
    let per = escape_samples.div_ceil(chunks);
    let esc = |steps: usize, tag: u64| -> (f64, f64) {
        let parts = par_samples(chunks, child_seed(seed, tag), |_, rng| Ok(escape_probability(&ctx.kernel, steps, per, rng).0)).expect("escape chunks");
        let p = parts.iter().sum::<f64>() / chunks as f64;
        (p, (p * (1.0 - p) / (per * chunks) as f64).sqrt())
    };
    let (p_escape, p_escape_se) = esc(escape_steps, 2);
    let (p_escape_short, _) = esc((escape_steps / 4).max(1), 3);
    let survival = [0.5, 1.0, 2.0, 4.0, 6.0]
        .iter()
        .map(|&s| (s / rate, l0.iter().filter(|&&l| l >= s / rate).count() as f64 / samples as f64, (-s).exp()))
        .collect();
    Ok(LocalTimeTail { rho, horizon, rate, rate_se, p_escape, p_escape_se, p_escape_short, survival })
}
