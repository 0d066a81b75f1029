//! Disorder paths: the enriched Poisson construction of `Y`, bridge-conditioned
//! walks, size-biased block resampling and the importance weights `w(s,t,Y)`.

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::spectral::Transitions;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;
use std::collections::HashMap;

/// One atom `(ϑ, U, V)` of the enriched Poisson process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Jump {
    pub theta: f64,
    pub u: u64,
    pub v: i64,
}

/// Piecewise-constant path `Y_t = y0 + Σ_{ϑ_i ≤ t} V_i` on `[0, T]`.
#[derive(Debug, Clone, Serialize)]
pub struct EnvPath {
    pub rho: f64,
    pub horizon: f64,
    pub y0: i64,
    jumps: Vec<Jump>,
    #[serde(skip)]
    prefix: Vec<i64>,
}

impl EnvPath {
    /// # Errors
    /// Unordered jump times, times outside `(0, T]`, or `|V| > U`.
    pub fn new(rho: f64, horizon: f64, y0: i64, jumps: Vec<Jump>) -> Result<Self> {
        let mut last = 0.0;
        for j in &jumps {
            if !(j.theta > last) || j.theta > horizon {
                return Err(Error::invalid(format!("jump time {} out of order or outside (0, {horizon}]", j.theta)));
            }
            if j.v.unsigned_abs() > j.u {
                return Err(Error::invalid(format!("|V| = {} exceeds U = {}", j.v.abs(), j.u)));
            }
            last = j.theta;
        }
        Ok(Self::from_sorted(rho, horizon, y0, jumps))
    }

    fn from_sorted(rho: f64, horizon: f64, y0: i64, jumps: Vec<Jump>) -> Self {
        let mut prefix = Vec::with_capacity(jumps.len() + 1);
        let mut y = y0;
        prefix.push(y);
        for j in &jumps {
            y = y.saturating_add(j.v);
            prefix.push(y);
        }
        EnvPath { rho, horizon, y0, jumps, prefix }
    }

    /// Constant path.
    pub fn constant(rho: f64, horizon: f64, y0: i64) -> Self {
        Self::from_sorted(rho, horizon, y0, Vec::new())
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn len(&self) -> usize {
        self.jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jumps.is_empty()
    }

    /// `Y_t`.
    ///
    /// # Errors
    /// `t ∉ [0, T]`.
    pub fn y_at(&self, t: f64) -> Result<i64> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::invalid(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(self.y_unchecked(t))
    }

    #[inline]
    fn y_unchecked(&self, t: f64) -> i64 {
        self.prefix[self.jumps.partition_point(|j| j.theta <= t)]
    }

    /// `Y` at `t = k·step`, `k = 0..=n`, by a single merge pass.
    pub fn on_grid(&self, step: f64, n: usize) -> Vec<i64> {
        let mut out = Vec::with_capacity(n + 1);
        let mut i = 0;
        for k in 0..=n {
            let t = k as f64 * step;
            while i < self.jumps.len() && self.jumps[i].theta <= t {
                i += 1;
            }
            out.push(self.prefix[i]);
        }
        out
    }

    /// Records with `ϑ ∈ (a, b]`.
    pub fn window(&self, a: f64, b: f64) -> &[Jump] {
        let lo = self.jumps.partition_point(|j| j.theta <= a);
        let hi = self.jumps.partition_point(|j| j.theta <= b);
        &self.jumps[lo..hi]
    }

    /// Occupation times `L_T(x)` per visited level.
    pub fn local_times(&self) -> HashMap<i64, f64> {
        let mut out = HashMap::new();
        let mut t = 0.0;
        for (i, j) in self.jumps.iter().enumerate() {
            *out.entry(self.prefix[i]).or_insert(0.0) += j.theta - t;
            t = j.theta;
        }
        *out.entry(*self.prefix.last().expect("prefix is never empty")).or_insert(0.0) += self.horizon - t;
        out
    }

    /// `(max_x L_T(x), argmax)`; ties go to the smaller level.
    pub fn local_time_max(&self) -> (f64, i64) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (x, l) in self.local_times() {
            if l > best.0 || (l == best.0 && x < best.1) {
                best = (l, x);
            }
        }
        best
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive Poisson mean").sample(rng) as usize
}

fn enriched_jumps<R: Rng + ?Sized>(kernel: &Kernel, rate: f64, horizon: f64, rng: &mut R) -> Vec<Jump> {
    let n = poisson(rate * horizon, rng);
    let mut times: Vec<f64> = (0..n).map(|_| horizon * (1.0 - rng.gen::<f64>())).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
        .into_iter()
        .map(|theta| {
            let u = kernel.sample_jump_amplitude(rng);
            let v = rng.gen_range(-(u as i64)..=u as i64);
            Jump { theta, u, v }
        })
        .collect()
}

/// Samples `Y` on `[0, T]` from the enriched process with intensity `ρ μ ⊗ dt`.
///
/// # Errors
/// `ρ ∉ [0, 1)` or `T ≤ 0`.
pub fn sample_env<R: Rng + ?Sized>(kernel: &Kernel, rho: f64, horizon: f64, rng: &mut R) -> Result<EnvPath> {
    if !(0.0..1.0).contains(&rho) || !(horizon > 0.0) {
        return Err(Error::invalid(format!("need ρ ∈ [0,1) and T > 0, got ρ = {rho}, T = {horizon}")));
    }
    Ok(EnvPath::from_sorted(rho, horizon, 0, enriched_jumps(kernel, rho, horizon, rng)))
}

/// Samples displacements with law `J` directly from the tabulated `J` and its
/// tail sums, without going through the amplitude decomposition.
#[derive(Debug, Clone)]
pub struct PlainJumpSampler {
    // P(|X| ≤ k) for k ≤ x_max
    cdf: Vec<f64>,
}

impl PlainJumpSampler {
    pub fn new(kernel: &Kernel) -> Self {
        let j = kernel.j_values();
        let mut cdf = Vec::with_capacity(j.len());
        let mut acc = crate::numeric::Sum::default();
        for (k, &p) in j.iter().enumerate() {
            acc.add(if k == 0 { p } else { 2.0 * p });
            cdf.push(acc.value());
        }
        PlainJumpSampler { cdf }
    }

    pub fn sample<R: Rng + ?Sized>(&self, kernel: &Kernel, rng: &mut R) -> i64 {
        let u: f64 = rng.gen();
        let last = *self.cdf.last().expect("non-empty table");
        let a = if u < last {
            self.cdf.partition_point(|&c| c <= u) as u64
        } else {
            // P(|X| > n) = 2 Σ_{ℓ>n} J(ℓ); find the smallest n with P(|X| > n) ≤ 1 - u
            let w = (1.0 - u).max(f64::MIN_POSITIVE);
            let mut lo = (self.cdf.len() - 1) as u64;
            let mut hi = lo * 2;
            while 2.0 * kernel.tail_j(hi) > w && hi < u64::MAX / 4 {
                lo = hi;
                hi *= 2;
            }
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if 2.0 * kernel.tail_j(mid) > w {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        };
        if a == 0 || rng.gen::<bool>() {
            a as i64
        } else {
            -(a as i64)
        }
    }
}

/// `Y_T` for the rate-`ρ` walk with jump law `J`, sampled without the enriched construction.
pub fn plain_endpoint<R: Rng + ?Sized>(kernel: &Kernel, sampler: &PlainJumpSampler, rho: f64, horizon: f64, rng: &mut R) -> i64 {
    let n = poisson(rho * horizon, rng);
    (0..n).map(|_| sampler.sample(kernel, rng)).fold(0i64, |s, x| s.saturating_add(x))
}

/// Rate-one walk on `[0, duration]` conditioned on `W_duration = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct BridgeSample {
    pub duration: f64,
    pub jumps: Vec<Jump>,
    pub attempts: u64,
}

/// Rejection sampler for the bridge; gives up after `max_attempts` trials.
///
/// # Errors
/// `duration ≤ 0`, or the attempt cap is exhausted.
pub fn sample_bridge<R: Rng + ?Sized>(kernel: &Kernel, duration: f64, rng: &mut R, max_attempts: u64) -> Result<BridgeSample> {
    if !(duration > 0.0) {
        return Err(Error::invalid("bridge duration must be positive"));
    }
    for attempt in 1..=max_attempts {
        let jumps = enriched_jumps(kernel, 1.0, duration, rng);
        if jumps.iter().map(|j| j.v).sum::<i64>() == 0 {
            return Ok(BridgeSample { duration, jumps, attempts: attempt });
        }
    }
    Err(Error::sampling(format!(
        "no bridge of duration {duration} after {max_attempts} attempts (acceptance below {:.3e})",
        1.0 / max_attempts as f64
    )))
}

/// Attempt cap `100 / p0(duration)`.
pub fn bridge_attempt_cap(trans: &Transitions, duration: f64) -> u64 {
    (100.0 / trans.curve().p0(duration)).ceil().min(1e12) as u64
}

/// Environment under the size-biased law given the contact set `tau`
/// (increasing, starting at 0): independent blocks, each the initial
/// `ρΔ`-segment of a bridge of duration `Δ`, time-rescaled by `1/ρ`.
pub fn size_biased_blocks<R: Rng + ?Sized>(trans: &Transitions, tau: &[f64], rho: f64, rng: &mut R) -> Result<EnvPath> {
    if tau.first() != Some(&0.0) || tau.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("contact set must start at 0 and increase strictly"));
    }
    let horizon = *tau.last().expect("non-empty contact set");
    let mut jumps = Vec::new();
    if rho > 0.0 {
        for w in tau.windows(2) {
            let delta = w[1] - w[0];
            let b = sample_bridge(trans.kernel(), delta, rng, bridge_attempt_cap(trans, delta))?;
            jumps.extend(b.jumps.iter().filter(|j| j.theta <= rho * delta).map(|j| Jump {
                theta: w[0] + j.theta / rho,
                ..*j
            }));
        }
    }
    Ok(EnvPath::from_sorted(rho, horizon.max(f64::MIN_POSITIVE), 0, jumps))
}

/// `w(s,t,Y) = P(X_{t-s} = Y_t - Y_s) / P(W_{t-s} = 0)` with `X` of rate `1-ρ`.
pub fn weight(trans: &Transitions, s: f64, t: f64, path: &EnvPath) -> Result<f64> {
    if !(s >= 0.0 && t > s) {
        return Err(Error::invalid(format!("weight needs 0 ≤ s < t, got s = {s}, t = {t}")));
    }
    let d = path.y_at(t)? - path.y_at(s)?;
    weight_of(trans, t - s, path.rho, d)
}

/// Weight for a block of length `dt` with displacement `d`.
pub fn weight_of(trans: &Transitions, dt: f64, rho: f64, d: i64) -> Result<f64> {
    if rho == 0.0 && d == 0 {
        return Ok(1.0);
    }
    Ok(trans.prob((1.0 - rho) * dt, d)? / trans.curve().p0(dt))
}

/// `∏ w(τ_{i-1}, τ_i, Y)` over consecutive contact points.
pub fn chain_weight(trans: &Transitions, tau: &[f64], path: &EnvPath) -> Result<f64> {
    let mut w = 1.0;
    for p in tau.windows(2) {
        w *= weight(trans, p[0], p[1], path)?;
    }
    Ok(w)
}

/// Monte Carlo estimate of the escape probability of the embedded jump
/// chain (a zero jump counts as a return), truncated at `steps` jumps.
/// Returns `(estimate, stderr)`.
pub fn escape_probability<R: Rng + ?Sized>(kernel: &Kernel, steps: usize, samples: usize, rng: &mut R) -> (f64, f64) {
    let mut esc = 0usize;
    for _ in 0..samples {
        let mut x = 0i64;
        let mut returned = false;
        for _ in 0..steps {
            x = x.saturating_add(kernel.sample_jump(rng));
            if x == 0 {
                returned = true;
                break;
            }
        }
        if !returned {
            esc += 1;
        }
    }
    let p = esc as f64 / samples as f64;
    (p, (p * (1.0 - p) / samples as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use crate::rng::stream;
    use crate::spectral::ReturnCurve;
    use crate::stats::{two_sample_chi2, Moments, Weighted};
    use proptest::prelude::*;
    use std::sync::{Arc, Mutex, OnceLock};

    fn trans(gamma: f64) -> Arc<Transitions> {
        static CACHE: OnceLock<Mutex<HashMap<u64, Arc<Transitions>>>> = OnceLock::new();
        let map = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut m = map.lock().unwrap();
        m.entry(gamma.to_bits())
            .or_insert_with(|| {
                let k = Arc::new(Kernel::build(KernelSpec::new(gamma).with_x_max(1 << 16)).unwrap());
                let c = Arc::new(ReturnCurve::build(&k));
                Arc::new(Transitions::new(k, c))
            })
            .clone()
    }

    fn path(jumps: &[(f64, i64)], horizon: f64) -> EnvPath {
        let js = jumps.iter().map(|&(theta, v)| Jump { theta, u: v.unsigned_abs(), v }).collect();
        EnvPath::new(0.5, horizon, 0, js).unwrap()
    }

    #[test]
    fn rejects_invalid_records() {
        let bad = vec![Jump { theta: 1.0, u: 1, v: 2 }];
        assert!(EnvPath::new(0.5, 2.0, 0, bad).is_err());
        let unordered = vec![Jump { theta: 1.0, u: 1, v: 1 }, Jump { theta: 0.5, u: 1, v: 1 }];
        assert!(EnvPath::new(0.5, 2.0, 0, unordered).is_err());
        assert!(path(&[], 3.0).y_at(3.5).is_err());
    }

    #[test]
    fn y_at_endpoints() {
        let p = path(&[(0.5, 3), (1.5, -1)], 2.0);
        assert_eq!(p.y_at(0.2).unwrap(), 0);
        assert_eq!(p.y_at(0.5).unwrap(), 3);
        assert_eq!(p.y_at(2.0).unwrap(), 2);
        assert_eq!(p.on_grid(0.5, 4), vec![0, 3, 3, 2, 2]);
    }

    #[test]
    fn local_time_accounting() {
        let p = EnvPath::constant(0.5, 7.0, 4);
        assert_eq!(p.local_time_max(), (7.0, 4));
        let q = path(&[(1.0, 2), (2.5, -2)], 10.0);
        let lt = q.local_times();
        assert!((lt[&0] - 8.5).abs() < 1e-12);
        assert!((lt[&2] - 1.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn y_at_matches_linear_scan(
            mut times in prop::collection::vec(0.001f64..10.0, 0..40),
            vs in prop::collection::vec(-5i64..=5, 40),
            probes in prop::collection::vec(0.0f64..10.0, 20),
        ) {
            times.sort_by(f64::total_cmp);
            times.dedup();
            let js: Vec<Jump> = times.iter().zip(&vs).map(|(&theta, &v)| Jump { theta, u: 5, v }).collect();
            let p = EnvPath::new(0.3, 10.0, 7, js.clone()).unwrap();
            for t in probes {
                let scan = 7 + js.iter().filter(|j| j.theta <= t).map(|j| j.v).sum::<i64>();
                prop_assert_eq!(p.y_at(t).unwrap(), scan);
            }
        }

        #[test]
        fn local_times_sum_to_horizon(seed in 0u64..1000) {
            let t = trans(0.75);
            let mut rng = stream(seed, 0);
            let p = sample_env(t.kernel(), 0.8, 30.0, &mut rng).unwrap();
            let total: f64 = p.local_times().values().sum();
            prop_assert!((total - 30.0).abs() < 1e-9);
        }
    }

    #[test]
    fn jump_count_and_conditional_second_moment() {
        let t = trans(0.75);
        let mut rng = stream(1, 0);
        let mut n = Moments::default();
        let mut v2 = Moments::default();
        for _ in 0..100_000 {
            let p = sample_env(t.kernel(), 0.3, 50.0, &mut rng).unwrap();
            n.push(p.len() as f64);
            for j in p.jumps().iter().filter(|j| j.u == 5) {
                v2.push((j.v * j.v) as f64);
            }
        }
        assert!((n.mean - 15.0).abs() < 4.0 * n.stderr(), "{:?}", n);
        assert!((v2.mean - 10.0).abs() < 4.0 * v2.stderr(), "{:?}", v2);
    }

    #[test]
    fn plain_sampler_matches_j() {
        let t = trans(0.6);
        let k = t.kernel();
        let s = PlainJumpSampler::new(k);
        let mut rng = stream(2, 0);
        let n = 400_000;
        let mut zero = 0;
        let mut far = 0;
        let cut = (k.x_max() / 4) as i64;
        for _ in 0..n {
            let x = s.sample(k, &mut rng);
            zero += (x == 0) as usize;
            far += (x.abs() > cut) as usize;
        }
        let p0 = k.j(0);
        let pf = 2.0 * k.tail_j(cut as u64);
        let se0 = (p0 * (1.0 - p0) / n as f64).sqrt();
        let sef = (pf / n as f64).sqrt();
        assert!((zero as f64 / n as f64 - p0).abs() < 4.0 * se0);
        assert!((far as f64 / n as f64 - pf).abs() < 4.0 * sef + 1.0 / n as f64);
    }

    #[test]
    fn enriched_and_plain_endpoints_agree() {
        let t = trans(0.6);
        let k = t.kernel();
        let s = PlainJumpSampler::new(k);
        let mut r1 = stream(3, 0);
        let mut r2 = stream(3, 1);
        let a: Vec<i64> = (0..50_000).map(|_| sample_env(k, 0.4, 50.0, &mut r1).unwrap().y_at(50.0).unwrap()).collect();
        let b: Vec<i64> = (0..50_000).map(|_| plain_endpoint(k, &s, 0.4, 50.0, &mut r2)).collect();
        let (_, _, p) = two_sample_chi2(&a, &b);
        assert!(p > 1e-3, "p = {p}");
    }

    #[test]
    fn bridge_acceptance_rate_is_return_probability() {
        let t = trans(0.75);
        let mut rng = stream(4, 0);
        let mut att = 0u64;
        let n = 10_000;
        for _ in 0..n {
            let b = sample_bridge(t.kernel(), 10.0, &mut rng, 1_000_000).unwrap();
            assert_eq!(b.jumps.iter().map(|j| j.v).sum::<i64>(), 0);
            att += b.attempts;
        }
        // attempts are geometric: mean 1/p, variance (1-p)/p²
        let p = t.curve().p0(10.0);
        let mean = att as f64 / n as f64;
        let se = ((1.0 - p) / (p * p) / n as f64).sqrt();
        assert!((mean - 1.0 / p).abs() < 4.0 * se, "{mean} vs {}", 1.0 / p);
        assert!(sample_bridge(t.kernel(), 1e-9, &mut rng, 1).unwrap().jumps.is_empty());
    }

    #[test]
    fn bridge_failure_is_reported() {
        let t = trans(0.75);
        let mut rng = stream(5, 0);
        let mut failures = 0;
        for _ in 0..50 {
            failures += sample_bridge(t.kernel(), 200.0, &mut rng, 1).is_err() as usize;
        }
        assert!(failures > 40);
    }

    #[test]
    fn weights_are_one_without_disorder_and_capped() {
        let t = trans(0.75);
        let p = EnvPath::constant(0.0, 10.0, 0);
        assert_eq!(weight(&t, 1.0, 7.0, &p).unwrap(), 1.0);
        let mut rng = stream(6, 0);
        let tt = 20.0;
        let cap = t.curve().p0(0.7 * tt) / t.curve().p0(tt);
        let mut m = Moments::default();
        for _ in 0..100_000 {
            let p = sample_env(t.kernel(), 0.3, tt, &mut rng).unwrap();
            let w = weight(&t, 0.0, tt, &p).unwrap();
            assert!(w > 0.0 && w <= cap * (1.0 + 1e-9));
            m.push(w);
        }
        assert!((m.mean - 1.0).abs() < 4.0 * m.stderr(), "{:?}", m);
    }

    #[test]
    fn size_biased_blocks_match_weighting() {
        let t = trans(0.75);
        let rho = 0.3;
        let delta = 8.0;
        let mut rng = stream(7, 0);
        let n = 40_000;
        let mut direct = Moments::default();
        let mut counts = [Moments::default(), Moments::default()];
        let mut cross = Moments::default();
        for _ in 0..n {
            let y = size_biased_blocks(&t, &[0.0, delta, 2.0 * delta], rho, &mut rng).unwrap();
            direct.push((y.y_at(delta).unwrap().abs() <= 3) as u8 as f64);
            let a = y.window(0.0, delta).len() as f64;
            let b = y.window(delta, 2.0 * delta).len() as f64;
            counts[0].push(a);
            counts[1].push(b);
            cross.push(a * b);
        }
        let mut weighted = Weighted::default();
        for _ in 0..n {
            let p = sample_env(t.kernel(), rho, delta, &mut rng).unwrap();
            let w = weight(&t, 0.0, delta, &p).unwrap();
            weighted.push(w, (p.y_at(delta).unwrap().abs() <= 3) as u8 as f64);
        }
        let se = (direct.stderr().powi(2) + weighted.stderr().powi(2)).sqrt();
        assert!((direct.mean - weighted.mean()).abs() < 4.0 * se, "{} {}", direct.mean, weighted.mean());
        let cov = cross.mean - counts[0].mean * counts[1].mean;
        let se_cov = (counts[0].variance() * counts[1].variance() / n as f64).sqrt();
        assert!(cov.abs() < 4.0 * se_cov, "cov {cov} ± {se_cov}");
        let flat = size_biased_blocks(&t, &[0.0, 3.0, 9.0], 0.0, &mut rng).unwrap();
        assert!(flat.is_empty());
    }

    #[test]
    fn escape_probability_is_beta0() {
        let t = trans(0.75);
        let mut rng = stream(8, 0);
        let (p, se) = escape_probability(t.kernel(), 4000, 20_000, &mut rng);
        let beta0 = 1.0 / t.curve().integral();
        // truncation only overestimates escape
        assert!(p > beta0 - 4.0 * se && p < beta0 + 4.0 * se + 0.02, "{p} ± {se} vs {beta0}");
    }
}
