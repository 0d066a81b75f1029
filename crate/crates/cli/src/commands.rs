//! One function per experiment name: read parameters, call the core
//! routines, collect tables, summary lines and invariant checks.

use crate::config::{ExperimentConfig, Params};
use crate::csv::{Cell, Table};
use crate::error::{CliError, Context as _, Result};
use rayon::prelude::*;
use rwpin::analysis::events::{epsilon_good_probe, regime_beta, EventParams, EventSet, EventSpec, ProbeConfig, ProbeReport, Regime};
use rwpin::analysis::experiments::{self as exp, CoarseGrainConfig, EngineConfig, SubTwoThirdsProbe};
use rwpin::analysis::{Context, StatReport, StatRow};
use rwpin::environment::sample_env;
use rwpin::homogeneous::doney_constant;
use rwpin::numeric::Sum;
use rwpin::partition::{PartitionResult, QuenchedSolver};
use rwpin::rng::{child_seed, stream};
use rwpin::spectral::transition_probs;

/// Every experiment name accepted in `experiment.name`.
pub const EXPERIMENTS: [&str; 14] = [
    "kernel-report",
    "homogeneous",
    "simulate-z",
    "events",
    "relevance",
    "irrelevance",
    "criticality",
    "fracmoment",
    "construction",
    "size-biased",
    "domination",
    "mecke",
    "engines",
    "local-time",
];

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, ok: bool, detail: String) -> Self {
        Check { name: name.to_string(), ok, detail }
    }
}

#[derive(Debug, Default)]
pub struct Output {
    pub claims: Vec<String>,
    /// `(file name, table)` pairs, written in this order.
    pub files: Vec<(String, Table)>,
    pub summary: Vec<String>,
    pub checks: Vec<Check>,
}

impl Output {
    fn report_file(&mut self, name: &str, reports: &[&StatReport]) {
        for r in reports {
            if !self.claims.contains(&r.claim) {
                self.claims.push(r.claim.clone());
            }
        }
        self.files.push((name.to_string(), Table::from_reports(reports)));
    }

    fn line(&mut self, s: String) {
        self.summary.push(s);
    }
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Output> {
    match cfg.experiment.name.as_str() {
        "kernel-report" => kernel_report(cfg),
        "homogeneous" => homogeneous(cfg),
        "simulate-z" => simulate_z(cfg),
        "events" => events(cfg),
        "relevance" => relevance(cfg),
        "irrelevance" => match cfg.experiment.regime.as_deref() {
            Some("criticality") => criticality(cfg),
            Some("gap") | None => gap(cfg),
            Some(other) => Err(CliError::config("experiment.regime", format!("irrelevance takes \"gap\" or \"criticality\", got {other:?}"))),
        },
        "criticality" => criticality(cfg),
        "fracmoment" => fracmoment(cfg),
        "construction" => construction(cfg),
        "size-biased" => size_biased(cfg),
        "domination" => domination(cfg),
        "mecke" => mecke(cfg),
        "engines" => engines(cfg),
        "local-time" => local_time(cfg),
        other => Err(CliError::config("experiment.name", format!("unknown experiment {other:?}; expected one of {EXPERIMENTS:?}"))),
    }
}

pub fn build_context(cfg: &ExperimentConfig) -> Result<Context> {
    Context::build(cfg.kernel_spec()).ctx("kernel")
}

fn seed_for(cfg: &ExperimentConfig, i: usize) -> u64 {
    child_seed(cfg.disorder.seed, i as u64)
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn regime_of(cfg: &ExperimentConfig, allowed: &[Regime]) -> Result<Regime> {
    let names: Vec<&str> = allowed.iter().map(|r| r.name()).collect();
    let name = cfg
        .experiment
        .regime
        .as_deref()
        .ok_or_else(|| CliError::config("experiment.regime", format!("required, one of {names:?}")))?;
    let r: Regime = name.parse().map_err(|_| CliError::config("experiment.regime", format!("unknown regime {name:?}; expected one of {names:?}")))?;
    if !allowed.contains(&r) {
        return Err(CliError::config("experiment.regime", format!("{name:?} is not valid here; expected one of {names:?}")));
    }
    Ok(r)
}

fn kernel_report(cfg: &ExperimentConfig) -> Result<Output> {
    let p = params_of(cfg)?;
    let ctx = build_context(cfg)?;
    let k = &ctx.kernel;
    let top = k.x_max() as u64;
    let mut out = Output::default();
    let mut rep = StatReport::new("kernel normalization, second marginal and tail identities");

    let mut s = Sum::default();
    s.add(k.j(0));
    for x in 1..=top {
        s.add(2.0 * k.j(x as i64));
    }
    s.add(2.0 * k.tail_j(top));
    let norm_err = (s.value() - 1.0).abs();
    let mut s = Sum::default();
    for v in k.mubar_values() {
        s.add(*v);
    }
    s.add(k.tail_mubar(top + 1));
    let tele_err = (s.value() - 1.0).abs();
    // Σ_{ℓ≥n} μ̄(ℓ) from the table against the closed tail sum
    let mut tail_err: f64 = 0.0;
    let mut acc = Sum::default();
    acc.add(k.tail_mubar(top + 1));
    let probes = [0, 1, 7, 100, top / 64, top / 2];
    for l in (0..=top).rev() {
        acc.add(k.mubar(l));
        if probes.contains(&l) {
            tail_err = tail_err.max((acc.value() - k.tail_mubar(l)).abs());
        }
    }
    rep.push(StatRow::new(&[], "normalization_error", norm_err, 0.0, top));
    rep.push(StatRow::new(&[], "marginal_telescoping_error", tele_err, 0.0, top));
    rep.push(StatRow::new(&[], "tail_identity_error", tail_err, 0.0, probes.len() as u64));
    rep.push(StatRow::new(&[], "tail_continuation_error", k.tail_error(), 0.0, 0));
    let n = p.positive("ratio_n", 1e5)?.round() as u64;
    let g = k.gamma();
    rep.push(StatRow::new(&[("n", n as f64)], "tail_ratio", k.tail_mubar(n) / (n as f64 * k.j(n as i64)), 0.0, 1));
    rep.push(StatRow::new(&[("n", n as f64)], "tail_ratio_limit_constant_phi", 2.0 * (1.0 + g) / g, 0.0, 0));
    let (lo, hi) = (p.positive("fit_lo", 1e2)?, p.positive("fit_hi", 1e4)?);
    let e = ctx.curve().fitted_exponent(lo, hi);
    rep.push(StatRow::new(&[("t_lo", lo), ("t_hi", hi)], "p0_exponent", -e, 0.0, 0));
    rep.push(StatRow::new(&[("t_lo", lo), ("t_hi", hi)], "p0_exponent_expected", -1.0 / g, 0.0, 0));
    rep.push(StatRow::new(&[], "beta0", ctx.beta0(), 0.0, 0));

    let mut curve = Table::new(&["t", "p0", "K"]);
    let ts = log_space(p.positive("grid_min", 1e-2)?, p.positive("grid_max", 1e6)?, p.count("grid_points", 81)?);
    let p0s: Vec<f64> = ts.iter().map(|&t| ctx.p0(t)).collect();
    for (&t, &q) in ts.iter().zip(&p0s) {
        curve.push(vec![t.into(), q.into(), ctx.k(t).into()]);
    }
    let monotone = p0s.windows(2).all(|w| w[1] < w[0]);
    let mut unimodal = true;
    for &t in &[0.5, 5.0, 30.0] {
        let tab = transition_probs(k, t, 2000).ctx("spectral")?;
        unimodal &= tab.probs.windows(2).all(|w| w[1] <= w[0]);
    }

    out.line(format!("beta0 = {:.12}", ctx.beta0()));
    out.line(format!("p0 exponent on [{lo}, {hi}] = {:.6} (expected {:.6})", -e, -1.0 / g));
    out.checks.push(Check::new("normalization", norm_err <= 1e-12, format!("|ΣJ - 1| = {norm_err:.3e}")));
    out.checks.push(Check::new("marginal_telescoping", tele_err <= 1e-14, format!("|Σμ̄ - 1| = {tele_err:.3e}")));
    out.checks.push(Check::new("tail_identity", tail_err <= 1e-12, format!("max error {tail_err:.3e}")));
    out.checks.push(Check::new("p0_monotone", monotone, "p0 strictly decreasing on the grid".into()));
    out.checks.push(Check::new("unimodal", unimodal, "transition laws at t = 0.5, 5, 30".into()));
    out.report_file("kernel_checks.csv", &[&rep]);
    out.files.push(("return_curve.csv".into(), curve));
    let dump = p.count("dump_max", 0)?;
    if dump > 0 {
        let mut t = Table::new(&["x", "J", "mubar"]);
        for x in 0..=dump as u64 {
            t.push(vec![x.into(), k.j(x as i64).into(), k.mubar(x).into()]);
        }
        out.files.push(("kernel_table.csv".into(), t));
    }
    Ok(out)
}

fn homogeneous(cfg: &ExperimentConfig) -> Result<Output> {
    let p = params_of(cfg)?;
    let ctx = build_context(cfg)?;
    let model = &ctx.model;
    let b0 = ctx.beta0();
    let mut out = Output::default();

    let mut ratios = if cfg.model.beta_grid.is_empty() {
        std::iter::once(1.0).chain(log_space(1e-4, 1.0, 40).into_iter().map(|r| 1.0 + r)).collect()
    } else {
        cfg.model.beta_grid.clone()
    };
    ratios.push(1.0);
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    let betas: Vec<f64> = ratios.iter().map(|r| b0 * r).collect();
    let fs = betas.iter().map(|&b| model.free_energy(b)).collect::<rwpin::Result<Vec<f64>>>().ctx("homogeneous")?;
    let log_point = |i: usize| {
        let (x, y) = (betas.get(i)? - b0, *fs.get(i)?);
        (x > 0.0 && y > 0.0).then(|| (x.ln(), y.ln()))
    };
    let mut table = Table::new(&["beta", "beta_ratio", "F", "nu_local_slope"]);
    for i in 0..betas.len() {
        let lo = if i > 0 { log_point(i - 1) } else { None }.or(log_point(i));
        let hi = log_point(i + 1).or(log_point(i));
        let slope = match (log_point(i), lo, hi) {
            (Some(_), Some(a), Some(b)) if b.0 > a.0 => Cell::F((b.1 - a.1) / (b.0 - a.0)),
            _ => Cell::Empty,
        };
        table.push(vec![betas[i].into(), ratios[i].into(), fs[i].into(), slope]);
    }
    let f0 = fs[0];
    let monotone = fs.windows(2).all(|w| w[1] >= w[0]);
    let slopes: Vec<f64> = (1..betas.len()).map(|i| (fs[i] - fs[i - 1]) / (betas[i] - betas[i - 1])).collect();
    let convex = slopes.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9) - 1e-14);
    out.checks.push(Check::new("free_energy_at_beta0", f0.abs() <= 1e-8, format!("F(β₀) = {f0:.3e}")));
    out.checks.push(Check::new("free_energy_monotone", monotone, format!("{} grid points", fs.len())));
    out.checks.push(Check::new("free_energy_convex", convex, "difference quotients non-decreasing".into()));
    out.files.push(("free_energy.csv".into(), table));

    let (nlo, nhi, npts) = (p.positive("nu_lo", 1e-4)?, p.positive("nu_hi", 1e-2)?, p.count("nu_points", 9)?);
    let fit = model.free_energy_exponent(nlo, nhi, npts.max(2)).ctx("homogeneous")?;
    let alpha = model.alpha();
    let mut rep = StatReport::new("homogeneous free energy and renewal density asymptotics");
    rep.push(StatRow::new(&[], "beta0", b0, 0.0, 0));
    rep.push(StatRow::new(&[], "alpha", alpha, 0.0, 0));
    rep.push(StatRow::new(&[("rel_lo", nlo), ("rel_hi", nhi)], "nu", fit.slope, fit.slope_se, npts as u64));
    out.line(format!("beta0 = {b0:.12}, alpha = {alpha:.6}"));
    out.line(format!("nu fit on (β-β₀)/β₀ in [{nlo}, {nhi}]: {:.4} ± {:.4}", fit.slope, fit.slope_se));

    let step = cfg.model.step;
    let grid = model.renewal_density_unit_mass(cfg.model.t_max, step).ctx("homogeneous")?;
    let scale = if alpha < 1.0 { doney_constant(alpha) } else { 1.0 / model.mean_inter_arrival(b0).ctx("homogeneous")? };
    let mut renewal = Table::new(&["t", "K", "u", "doney_ratio"]);
    let mut seen = Vec::new();
    for t in log_space(p.positive("t_min", (10.0 * step).max(1.0))?, cfg.model.t_max, p.count("t_points", 40)?) {
        let j = ((t / step).round() as usize).min(grid.u.len() - 1);
        if seen.contains(&j) {
            continue;
        }
        seen.push(j);
        let t = j as f64 * step;
        let u = grid.u[j];
        let kt = ctx.k(t);
        let ratio = if alpha < 1.0 { u * t * t * kt / scale } else { u / scale };
        renewal.push(vec![t.into(), kt.into(), u.into(), ratio.into()]);
    }
    let last = renewal.rows.last().and_then(|r| if let Cell::F(x) = r[3] { Some(x) } else { None });
    if let Some(r) = last {
        let which = if alpha < 1.0 { "u t² K / (α sin πα / π)" } else { "u m" };
        out.line(format!("{which} at t = {} is {r:.4}", cfg.model.t_max));
        rep.push(StatRow::new(&[("t", cfg.model.t_max)], "doney_ratio", r, 0.0, 0));
    }
    out.report_file("homogeneous_fit.csv", &[&rep]);
    out.files.push(("renewal.csv".into(), renewal));
    Ok(out)
}

fn simulate_z(cfg: &ExperimentConfig) -> Result<Output> {
    let p = params_of(cfg)?;
    let [rho] = cfg.disorder.rho[..] else {
        return Err(CliError::config("disorder.rho", "simulate-z takes a single value"));
    };
    let method = p.text("method", "both")?;
    let (vol, mc) = match method {
        "volterra" => (true, false),
        "mc" => (false, true),
        "both" => (true, true),
        other => return Err(CliError::config("experiment.params.method", format!("expected volterra, mc or both, got {other:?}"))),
    };
    let ctx = build_context(cfg)?;
    let beta = p.positive("beta", ctx.beta0())?;
    let horizon = p.positive("horizon", cfg.model.t_max)?;
    let chains = p.count("chains", 1000)?;
    let step = cfg.model.step;
    let solver = QuenchedSolver::new(ctx.trans.clone(), &ctx.model, beta, rho, horizon, step).ctx("partition")?;
    let env_seed = child_seed(cfg.disorder.seed, 0);
    let mc_seed = child_seed(cfg.disorder.seed, 1);
    let rows: Vec<Vec<PartitionResult>> = (0..cfg.disorder.samples)
        .into_par_iter()
        .map(|i| {
            let path = sample_env(&ctx.kernel, rho, horizon, &mut stream(env_seed, i as u64))?;
            let mut r = Vec::new();
            if vol {
                let q = solver.solve(&path)?;
                r.extend([q.free(), q.constrained(), q.normalized()]);
            }
            if mc {
                r.push(solver.mc_normalized(&path, chains, &mut stream(mc_seed, i as u64))?.result);
            }
            Ok(r)
        })
        .collect::<rwpin::Result<_>>()
        .ctx("partition")?;
    let mut t = Table::new(&["sample_id", "method", "kind", "value", "log_value", "stderr"]);
    for (i, rs) in rows.iter().enumerate() {
        for r in rs {
            let m = serde_json::to_value(r.method).expect("enum");
            let k = serde_json::to_value(r.kind).expect("enum");
            t.push(vec![
                i.into(),
                m.as_str().unwrap_or_default().into(),
                k.as_str().unwrap_or_default().into(),
                r.value.into(),
                r.log_value.into(),
                r.stderr.map_or(Cell::Empty, Cell::F),
            ]);
        }
    }
    let all_finite = rows.iter().flatten().all(|r| r.log_value.is_finite() && r.value >= 0.0);
    let mut out = Output::default();
    out.claims.push("quenched partition functions of single environments".into());
    out.line(format!("rho = {rho}, beta = {beta:.12} (beta0 = {:.12}), T = {horizon}, step = {step}", ctx.beta0()));
    out.line(format!("{} environments, method {method}", cfg.disorder.samples));
    out.checks.push(Check::new("finite_partition", all_finite, "every log Z finite and Z ≥ 0".into()));
    out.files.push(("z.csv".into(), t));
    Ok(out)
}

fn probe_lines(out: &mut Output, rho: f64, beta: f64, horizon: f64, r: &ProbeReport) {
    out.line(format!(
        "rho = {rho}: beta = {beta:.10}, T = {horizon:.4}, P(A) = {:.4e} ± {:.1e}, Q[P_tau(A^c)] = {:.4e} ± {:.1e}, ESS min {:.3}, mean {:.3}, collapsed {}/{}",
        r.p_a, r.p_a_se, r.q_ac, r.q_ac_se, r.ess_min, r.ess_mean, r.collapsed, r.n_outer
    ));
}

fn events(cfg: &ExperimentConfig) -> Result<Output> {
    let p = params_of(cfg)?;
    let regime = regime_of(cfg, &Regime::ALL)?;
    let d = EventParams::default();
    let params = EventParams { eta: p.num("eta", d.eta)?, delta: p.num("delta", d.delta)?, epsilon: p.num("epsilon", d.epsilon)?, r: p.num("r", d.r)? };
    let ctx = build_context(cfg)?;
    let b0 = ctx.beta0();
    let mut out = Output::default();
    let mut reports = Vec::new();
    for (i, &rho) in cfg.disorder.rho.iter().enumerate() {
        let beta = match p.optional("beta_ratio")? {
            Some(r) => b0 * r,
            None => regime_beta(&ctx, regime, rho, p.positive("c1", 0.5)?, p.positive("c0", 10.0)?).ctx("events")?,
        };
        let horizon = match p.optional("horizon")? {
            Some(t) => t,
            None if beta > b0 => 1.0 / ctx.model.free_energy(beta).ctx("homogeneous")?,
            None => cfg.model.t_max,
        };
        let window = (p.num("window_lo", 0.0)?, p.num("window_hi", horizon)?);
        let spec = EventSpec::new(regime, params, horizon, window).ctx("events")?;
        let set = EventSet::new(&ctx, spec, rho, beta).ctx("events")?;
        let probe = ProbeConfig {
            n_outer: p.count("n_outer", 100)?,
            n_inner: cfg.disorder.samples,
            step: p.positive("step", cfg.model.step)?,
            ess_floor: p.num("ess_floor", 0.1)?,
            seed: seed_for(cfg, i),
        };
        let r = epsilon_good_probe(&set, &probe).ctx("events")?;
        probe_lines(&mut out, rho, beta, horizon, &r);
        reports.push(r.report);
    }
    let refs: Vec<&StatReport> = reports.iter().collect();
    out.report_file("events.csv", &refs);
    Ok(out)
}

fn relevance(cfg: &ExperimentConfig) -> Result<Output> {
    let regime = regime_of(cfg, &[Regime::SubTwoThirds, Regime::Marginal])?;
    let ctx = build_context(cfg)?;
    let mut out = Output::default();
    let mut reports = Vec::new();
    match regime {
        Regime::SubTwoThirds => {
            let p = params_of(cfg)?;
            let deltas = p.positive_list("deltas", &[1.0, 3.0, 10.0])?;
            let r_param = p.positive("r", 5.0)?;
            for (i, &rho) in cfg.disorder.rho.iter().enumerate() {
                let (rows, rep) = exp::expectation_shift_report(&ctx, rho, regime, &deltas).ctx("relevance")?;
                let worst = rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
                out.line(format!("rho = {rho}: largest shift ratio (E - E_Δ)/(ρΔ) = {worst:.4}"));
                reports.push(rep);
                if rho == 0.0 {
                    continue;
                }
                let probe = SubTwoThirdsProbe {
                    rho,
                    r: r_param,
                    c1: p.positive("c1", 0.5)?,
                    c0: p.positive("c0", 10.0)?,
                    probe: ProbeConfig {
                        n_outer: p.count("n_outer", 200)?,
                        n_inner: cfg.disorder.samples,
                        step: p.positive("step", cfg.model.step)?,
                        ess_floor: p.num("ess_floor", 0.1)?,
                        seed: seed_for(cfg, i),
                    },
                };
                let r = exp::sub_two_thirds_probe(&ctx, &probe).ctx("relevance")?;
                let beta = regime_beta(&ctx, regime, rho, probe.c1, probe.c0).ctx("events")?;
                let horizon = 1.0 / ctx.model.free_energy(beta).ctx("homogeneous")?;
                probe_lines(&mut out, rho, beta, horizon, &r);
                out.line(format!("rho = {rho}: bound 1/R² = {:.4e}", 1.0 / (r_param * r_param)));
                reports.push(r.report);
            }
        }
        Regime::Marginal => {
            let p = params_of(cfg)?;
            if (cfg.kernel.gamma - 2.0 / 3.0).abs() > 1e-9 {
                return Err(CliError::config("kernel.gamma", "the marginal regime needs gamma = 2/3"));
            }
            let horizons = p.positive_list("horizons", &[50.0, 100.0, 200.0, 400.0, 800.0])?;
            let deltas = p.positive_list("deltas", &[10.0, 100.0])?;
            for &rho in &cfg.disorder.rho {
                let m = exp::marginal_report(&ctx, rho, &horizons);
                let (lo, hi) = m.ratio_range();
                out.line(format!(
                    "rho = {rho}: Var(F_T)/(ρT S(T)) in [{lo:.4}, {hi:.4}]; psi exponent {:.4} against log log(1/K(T)), {:.4} against log log T",
                    m.psi_exponent, m.psi_exponent_log_t
                ));
                reports.push(m.report);
                let (_, rep) = exp::expectation_shift_report(&ctx, rho, regime, &deltas).ctx("relevance")?;
                reports.push(rep);
            }
        }
        _ => unreachable!("regime_of restricts the regime"),
    }
    let refs: Vec<&StatReport> = reports.iter().collect();
    out.report_file("relevance.csv", &refs);
    Ok(out)
}

fn criticality(cfg: &ExperimentConfig) -> Result<Output> {
    let p = params_of(cfg)?;
    let horizons = p.positive_list("horizons", &[25.0, 50.0, 100.0, 200.0])?;
    let ctx = build_context(cfg)?;
    let r = exp::criticality_experiment(&ctx, &cfg.disorder.rho, &horizons, cfg.disorder.samples, cfg.model.step, cfg.disorder.seed)
        .ctx("criticality")?;
    let mut out = Output::default();
    for &(rho, s) in &r.slopes {
        out.line(format!("rho = {rho}: slope of log median W against log T = {s:.5}"));
    }
    if let Some(s) = r.slope(0.0) {
        out.checks.push(Check::new("no_disorder_flat", s.abs() <= 1e-6, format!("slope at rho = 0 is {s:.3e}")));
    }
    out.report_file("criticality.csv", &[&r.report]);
    Ok(out)
}

fn gap(cfg: &ExperimentConfig) -> Result<Output> {
    let p = params_of(cfg)?;
    let mut horizons = p.positive_list("horizons", &[60.0])?;
    let mut ft = p.positive_list("ft", &[3.0])?;
    match (horizons.len(), ft.len()) {
        (a, b) if a == b => {}
        (1, b) => horizons = vec![horizons[0]; b],
        (a, 1) => ft = vec![ft[0]; a],
        _ => return Err(CliError::config("experiment.params.ft", "needs one entry per horizon, or a single value")),
    }
    let ctx = build_context(cfg)?;
    let betas = ft.iter().zip(&horizons).map(|(f, t)| ctx.beta_for_free_energy(f / t)).collect::<rwpin::Result<Vec<f64>>>().ctx("homogeneous")?;
    let mut out = Output::default();
    let mut reports = Vec::new();
    for (i, &rho) in cfg.disorder.rho.iter().enumerate() {
        let (rows, rep) = exp::irrelevance_gap(&ctx, rho, &betas, &horizons, cfg.disorder.samples, cfg.model.step, seed_for(cfg, i)).ctx("irrelevance")?;
        for r in &rows {
            out.line(format!(
                "rho = {rho}, beta = {:.10}, F T = {:.3}: (1/T) log E[1 ∧ W] = {:.5} ± {:.5}, E[W] = {:.4} ± {:.4}",
                r.beta,
                r.free_energy * r.horizon,
                r.rate,
                r.rate_se,
                r.mean_w,
                r.mean_w_se
            ));
        }
        out.checks.push(Check::new("min_below_one", rows.iter().all(|r| r.mean_min <= 1.0), format!("rho = {rho}")));
        reports.push(rep);
    }
    let refs: Vec<&StatReport> = reports.iter().collect();
    out.report_file("irrelevance.csv", &refs);
    Ok(out)
}

fn fracmoment(cfg: &ExperimentConfig) -> Result<Output> {
    let p = params_of(cfg)?;
    let ctx = build_context(cfg)?;
    let beta = match p.optional("beta_ratio")? {
        Some(r) => ctx.beta0() * r,
        None => ctx.beta_for_free_energy(p.positive("free_energy", 0.05)?).ctx("homogeneous")?,
    };
    let n_blocks = p.count("n_blocks", 4)?;
    let cg = match (p.optional("theta")?, p.optional("block_t")?) {
        (None, None) => CoarseGrainConfig::new(&ctx, beta, n_blocks),
        (theta, block) => {
            let alpha = ctx.model.alpha();
            let f = ctx.model.free_energy(beta).ctx("homogeneous")?;
            CoarseGrainConfig::with_theta(theta.unwrap_or((1.0 + alpha).powf(-0.5)), alpha, block.unwrap_or(1.0 / f), n_blocks)
        }
    }
    .ctx("fracmoment")?;
    let horizons = p.list("horizons", &[])?;
    let mut out = Output::default();
    let mut reports = Vec::new();
    for (i, &rho) in cfg.disorder.rho.iter().enumerate() {
        let r = exp::fractional_moment(&ctx, rho, beta, &cg, cfg.disorder.samples, cfg.model.step, seed_for(cfg, i)).ctx("fracmoment")?;
        out.line(format!("rho = {rho}: theta = {:.4}, block T = {:.3}, max/min of E[Z^theta] over {} blocks = {:.4}", cg.theta, cg.block_t, cg.n_blocks, r.spread));
        reports.push(r.report);
        if horizons.len() >= 2 {
            let q = exp::quenched_free_energy(&ctx, rho, beta, &horizons, cfg.disorder.samples, cfg.model.step, child_seed(seed_for(cfg, i), 1))
                .ctx("fracmoment")?;
            let mut rep = StatReport::new("quenched free energy by extrapolation in 1/T");
            for &(t, m, se) in &q.points {
                rep.push(StatRow::new(&[("rho", rho), ("beta", beta), ("T", t)], "mean_log_Z_over_T", m, se, cfg.disorder.samples as u64));
            }
            rep.push(StatRow::new(&[("rho", rho), ("beta", beta)], "quenched_free_energy", q.estimate, q.ci / 1.96, cfg.disorder.samples as u64));
            rep.push(StatRow::new(&[("rho", rho), ("beta", beta)], "annealed_free_energy", q.annealed, 0.0, 0));
            out.line(format!("rho = {rho}: quenched F = {:.5} ± {:.5} (95%), annealed F = {:.5}", q.estimate, q.ci, q.annealed));
            reports.push(rep);
        }
    }
    let refs: Vec<&StatReport> = reports.iter().collect();
    out.report_file("fracmoment.csv", &refs);
    Ok(out)
}

fn two_sample_lines(out: &mut Output, rho: f64, r: &exp::TwoSample) {
    out.line(format!("rho = {rho}: chi2 = {:.3}, df = {}, p = {:.4}, n = {} / {}", r.statistic, r.df, r.p_value, r.n_a, r.n_b));
}

fn construction(cfg: &ExperimentConfig) -> Result<Output> {
    let p = params_of(cfg)?;
    let horizon = p.positive("horizon", 50.0)?;
    let ctx = build_context(cfg)?;
    let mut out = Output::default();
    let mut reports = Vec::new();
    for (i, &rho) in cfg.disorder.rho.iter().enumerate() {
        let r = exp::construction_equivalence(&ctx, rho, horizon, cfg.disorder.samples, seed_for(cfg, i)).ctx("environment")?;
        two_sample_lines(&mut out, rho, &r);
        reports.push(r.report);
    }
    let refs: Vec<&StatReport> = reports.iter().collect();
    out.report_file("construction.csv", &refs);
    Ok(out)
}

fn size_biased(cfg: &ExperimentConfig) -> Result<Output> {
    let p = params_of(cfg)?;
    let t = p.positive("t", 20.0)?;
    let ctx = build_context(cfg)?;
    let mut out = Output::default();
    let mut reports = Vec::new();
    for (i, &rho) in cfg.disorder.rho.iter().enumerate() {
        let r = exp::size_biased_marginal(&ctx, rho, t, cfg.disorder.samples, seed_for(cfg, i)).ctx("environment")?;
        two_sample_lines(&mut out, rho, &r);
        reports.push(r.report);
    }
    let refs: Vec<&StatReport> = reports.iter().collect();
    out.report_file("size_biased.csv", &refs);
    Ok(out)
}

fn domination(cfg: &ExperimentConfig) -> Result<Output> {
    let p = params_of(cfg)?;
    let ts = p.positive_list("ts", &[5.0, 20.0, 50.0])?;
    let threshold = p.num("threshold", 3.0)?;
    let ctx = build_context(cfg)?;
    let mut out = Output::default();
    let mut reports = Vec::new();
    for (i, &rho) in cfg.disorder.rho.iter().enumerate() {
        let (rows, rep) = exp::domination_report(&ctx, rho, &ts, threshold, cfg.disorder.samples, seed_for(cfg, i)).ctx("environment")?;
        for r in &rows {
            out.line(format!(
                "rho = {rho}, t = {}: {} weighted {:.5} ± {:.5} against plain {:.5} ({})",
                r.t,
                r.statistic,
                r.weighted,
                r.weighted_se,
                r.plain,
                if r.holds() { "dominated" } else { "NOT dominated" }
            ));
        }
        reports.push(rep);
    }
    let refs: Vec<&StatReport> = reports.iter().collect();
    out.report_file("domination.csv", &refs);
    Ok(out)
}

fn mecke(cfg: &ExperimentConfig) -> Result<Output> {
    let p = params_of(cfg)?;
    let ts = p.positive_list("ts", &[2.0, 5.0, 10.0])?;
    let threshold = p.num("threshold", 4.0)?;
    let ctx = build_context(cfg)?;
    let betas: Vec<f64> = p.positive_list("beta_ratios", &[1.1, 1.3, 2.0])?.iter().map(|r| r * ctx.beta0()).collect();
    let m = exp::mecke_report(&ctx, &cfg.disorder.rho, &ts, threshold, &betas, cfg.disorder.samples, cfg.disorder.seed).ctx("mecke")?;
    let mut out = Output::default();
    let agree = m.rows.iter().filter(|r| r.agrees()).count();
    out.line(format!("{agree}/{} closed forms within 4 stderr of weighted Monte Carlo", m.rows.len()));
    let held = m.shifts.iter().filter(|s| s.holds()).count();
    out.line(format!("{held}/{} shift bounds hold", m.shifts.len()));
    out.checks.push(Check::new("shift_bound", held == m.shifts.len(), "closed-form shift bound for t ≤ 1/F".into()));
    out.report_file("mecke.csv", &[&m.report]);
    Ok(out)
}

fn engines(cfg: &ExperimentConfig) -> Result<Output> {
    let p = params_of(cfg)?;
    let d = EngineConfig::default();
    let ctx = build_context(cfg)?;
    let beta = ctx.beta0() * p.positive("beta_ratio", 1.0)?;
    let mut out = Output::default();
    let mut reports = Vec::new();
    for (i, &rho) in cfg.disorder.rho.iter().enumerate() {
        let ec = EngineConfig {
            rho,
            horizon: p.positive("horizon", d.horizon)?,
            step: cfg.model.step,
            environments: cfg.disorder.samples,
            fixed_paths: p.count("fixed_paths", d.fixed_paths)?,
            chains: p.count("chains", d.chains)?,
            seed: seed_for(cfg, i),
        };
        let r = exp::partition_engines(&ctx, beta, &ec).ctx("partition")?;
        out.line(format!(
            "rho = {rho}: |log Z(rho=0) - log z| = {:.3e}, E[W] = {:.5} ± {:.5}, engines agree on {}/{} paths",
            r.no_disorder_error,
            r.mean_normalized,
            r.mean_normalized_se,
            r.fixed.iter().filter(|&&(v, m, se, _)| (v - m).abs() <= 4.0 * se).count(),
            r.fixed.len()
        ));
        out.checks.push(Check::new("no_disorder_reduction", r.no_disorder_error <= 1e-6, format!("{:.3e}", r.no_disorder_error)));
        reports.push(r.report);
    }
    let refs: Vec<&StatReport> = reports.iter().collect();
    out.report_file("engines.csv", &refs);
    Ok(out)
}

fn local_time(cfg: &ExperimentConfig) -> Result<Output> {
    let p = params_of(cfg)?;
    let horizon = p.positive("horizon", 100.0)?;
    let ctx = build_context(cfg)?;
    let mut out = Output::default();
    let mut rep = StatReport::new("tail of the maximal local time of the environment");
    for (i, &rho) in cfg.disorder.rho.iter().enumerate() {
        let r = exp::local_time_tail(&ctx, rho, horizon, cfg.disorder.samples, p.count("escape_steps", 4000)?, p.count("escape_samples", 20_000)?, seed_for(cfg, i))
            .ctx("environment")?;
        let params = [("rho", rho), ("T", horizon)];
        rep.push(StatRow::new(&params, "decay_rate", r.rate, r.rate_se, cfg.disorder.samples as u64));
        rep.push(StatRow::new(&params, "predicted_rate", r.predicted_rate(), rho * r.p_escape_se, 0));
        rep.push(StatRow::new(&params, "p_escape", r.p_escape, r.p_escape_se, 0));
        rep.push(StatRow::new(&params, "p_escape_short_cutoff", r.p_escape_short, 0.0, 0));
        out.line(format!("rho = {rho}: rate {:.5} ± {:.5}, predicted ρ p_esc = {:.5}, cutoff bias {:.2e}", r.rate, r.rate_se, r.predicted_rate(), r.p_escape_short - r.p_escape));
    }
    out.report_file("local_time.csv", &[&rep]);
    Ok(out)
}

/// Allowed `[experiment.params]` keys for an experiment name and regime.
pub fn param_keys(name: &str, regime: Option<&str>) -> Option<&'static [&'static str]> {
    Some(match name {
        "kernel-report" => &["grid_min", "grid_max", "grid_points", "dump_max", "ratio_n", "fit_lo", "fit_hi"],
        "homogeneous" => &["t_min", "t_points", "nu_lo", "nu_hi", "nu_points"],
        "simulate-z" => &["beta", "horizon", "chains", "method"],
        "events" => &["eta", "delta", "epsilon", "r", "c1", "c0", "beta_ratio", "horizon", "window_lo", "window_hi", "n_outer", "step", "ess_floor"],
        "relevance" if regime == Some("marginal") => &["horizons", "deltas"],
        "relevance" => &["r", "c1", "c0", "n_outer", "step", "ess_floor", "deltas"],
        "irrelevance" if regime == Some("criticality") => &["horizons"],
        "irrelevance" => &["horizons", "ft"],
        "criticality" => &["horizons"],
        "fracmoment" => &["free_energy", "beta_ratio", "n_blocks", "theta", "block_t", "horizons"],
        "construction" => &["horizon"],
        "size-biased" => &["t"],
        "domination" => &["ts", "threshold"],
        "mecke" => &["ts", "threshold", "beta_ratios"],
        "engines" => &["horizon", "fixed_paths", "chains", "beta_ratio"],
        "local-time" => &["horizon", "escape_steps", "escape_samples"],
        _ => return None,
    })
}

fn params_of(cfg: &ExperimentConfig) -> Result<Params<'_>> {
    let keys = param_keys(&cfg.experiment.name, cfg.experiment.regime.as_deref())
        .ok_or_else(|| CliError::config("experiment.name", format!("unknown experiment {:?}; expected one of {EXPERIMENTS:?}", cfg.experiment.name)))?;
    cfg.params(keys)
}

/// Validates the experiment name, regime and parameter keys without running.
pub fn dry_check(cfg: &ExperimentConfig) -> Result<()> {
    params_of(cfg)?;
    match cfg.experiment.name.as_str() {
        "events" => regime_of(cfg, &Regime::ALL).map(|_| ()),
        "relevance" => regime_of(cfg, &[Regime::SubTwoThirds, Regime::Marginal]).map(|_| ()),
        "irrelevance" => match cfg.experiment.regime.as_deref() {
            None | Some("gap") | Some("criticality") => Ok(()),
            Some(other) => Err(CliError::config("experiment.regime", format!("irrelevance takes \"gap\" or \"criticality\", got {other:?}"))),
        },
        _ => Ok(()),
    }
}
