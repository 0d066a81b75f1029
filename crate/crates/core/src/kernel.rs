//! Symmetric heavy-tailed jump kernel `J(x) ∝ φ(|x|)(1+|x|)^{-(1+γ)}` on ℤ.
//!
//! The table stores `J` exactly up to `x_max`; beyond that the profile is
//! continued analytically and tail sums use the midpoint Euler-Maclaurin
//! expansion. The amplitude law `μ̄(k) = (2k+1)(J(k) - J(k+1))` marks the
//! enriched representation in which a jump of amplitude `k` picks its
//! displacement uniformly in `{-k, ..., k}`.

use crate::error::{Error, Result};
use crate::numeric::{self, Sum};
use rand::Rng;
use rand_distr::{Distribution, WeightedAliasIndex};
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};

/// Largest amplitude returned by the sampler; the probability mass beyond it
/// is below `2^{-60γ}` times a constant.
pub const AMPLITUDE_CAP: u64 = 1 << 60;

const HAT_NODES_PER_DECADE: f64 = 64.0;
const SERIES_LIMIT: f64 = 0.5;
const N_MOMENTS: usize = 16;
const FAR_NODES_PER_DECADE: f64 = 24.0;
const FAR_THETA: f64 = 1e-60;

/// Slowly varying factor `φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlowVariation {
    /// `φ ≡ 1`.
    Constant,
    /// `φ(x) = (ln(e + x))^κ`.
    LogPower { kappa: f64 },
}

impl SlowVariation {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SlowVariation::Constant => 1.0,
            SlowVariation::LogPower { kappa } => (E + x).ln().powf(kappa),
        }
    }

    /// `φ'(x) / φ(x)`.
    #[inline]
    fn log_slope(&self, x: f64) -> f64 {
        match *self {
            SlowVariation::Constant => 0.0,
            SlowVariation::LogPower { kappa } => kappa / ((E + x) * (E + x).ln()),
        }
    }

    fn kappa(&self) -> f64 {
        match *self {
            SlowVariation::Constant => 0.0,
            SlowVariation::LogPower { kappa } => kappa,
        }
    }
}

/// Parameters of a kernel table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub gamma: f64,
    pub phi: SlowVariation,
    pub x_max: usize,
    /// Upper bound on the relative error of the analytic tail continuation.
    pub tail_tol: f64,
}

impl KernelSpec {
    pub fn new(gamma: f64) -> Self {
        Self { gamma, phi: SlowVariation::Constant, x_max: 1 << 20, tail_tol: 1e-12 }
    }

    pub fn with_phi(mut self, phi: SlowVariation) -> Self {
        self.phi = phi;
        self
    }

    pub fn with_x_max(mut self, x_max: usize) -> Self {
        self.x_max = x_max;
        self
    }
}

/// Normalized kernel with precomputed tables and a sampler for `μ̄`.
pub struct Kernel {
    spec: KernelSpec,
    norm: f64,
    j: Vec<f64>,
    tail_j: Vec<f64>,
    mubar: Vec<f64>,
    mubar_beyond: f64,
    alias: WeightedAliasIndex<f64>,
    moments: [f64; N_MOMENTS],
    hat: HatTable,
    far: Option<HatTable>,
    tail_error: f64,
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kernel").field("spec", &self.spec).field("norm", &self.norm).finish()
    }
}

/// `ln ĥ` and `d ln ĥ / d ln θ` on a uniform grid in `ln θ`.
struct HatTable {
    u0: f64,
    du: f64,
    ln_h: Vec<f64>,
    slope: Vec<f64>,
}

impl HatTable {
    fn build(kernel: &Kernel, u0: f64, u1: f64, per_decade: f64) -> Self {
        use rayon::prelude::*;
        let n = ((u1 - u0) / (std::f64::consts::LN_10 / per_decade)).ceil() as usize + 1;
        let du = (u1 - u0) / (n - 1) as f64;
        let nodes: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let th = (u0 + i as f64 * du).exp().min(PI);
                let (h, dh) = kernel.hat_with_slope(th);
                (h.ln(), th * dh / h)
            })
            .collect();
        HatTable { u0, du, ln_h: nodes.iter().map(|p| p.0).collect(), slope: nodes.iter().map(|p| p.1).collect() }
    }

    /// Hermite interpolation of `ln ĥ` at `u = ln θ ≥ u0`.
    fn ln_eval(&self, u: f64) -> f64 {
        let pos = (u - self.u0) / self.du;
        let i = (pos.floor() as usize).min(self.ln_h.len() - 2);
        let x0 = self.u0 + i as f64 * self.du;
        numeric::hermite(x0, x0 + self.du, self.ln_h[i], self.ln_h[i + 1], self.slope[i], self.slope[i + 1], u)
    }
}

impl Kernel {
    /// Builds and normalizes the kernel table.
    ///
    /// # Errors
    /// Rejects `γ ∉ (0,1)`, `x_max < 2^10`, a tail error estimate above
    /// `tail_tol`, and profiles that are not non-increasing.
    pub fn build(spec: KernelSpec) -> Result<Self> {
        let g = spec.gamma;
        if !(g > 0.0 && g < 1.0) {
            return Err(Error::invalid(format!("gamma must lie in (0,1), got {g}")));
        }
        if spec.x_max < 1 << 10 {
            return Err(Error::invalid(format!("x_max must be at least 1024, got {}", spec.x_max)));
        }
        if !(spec.tail_tol > 0.0) {
            return Err(Error::invalid("tail_tol must be positive"));
        }
        let kappa = spec.phi.kappa();
        if !kappa.is_finite() {
            return Err(Error::invalid("kappa must be finite"));
        }
        let m = spec.x_max;
        let mf = m as f64;

        let mut proto = Kernel {
            spec,
            norm: 1.0,
            j: Vec::new(),
            tail_j: Vec::new(),
            mubar: Vec::new(),
            mubar_beyond: 0.0,
            alias: WeightedAliasIndex::new(vec![1.0]).expect("trivial alias"),
            moments: [0.0; N_MOMENTS],
            hat: HatTable { u0: 0.0, du: 1.0, ln_h: Vec::new(), slope: Vec::new() },
            far: None,
            tail_error: 0.0,
        };

        // monotonicity: table part by exact differences, continuation by the sign of g'
        let diffs: Vec<f64> = (0..=m).map(|x| proto.profile_diff(x as f64)).collect();
        if let Some(x) = diffs.iter().position(|&d| d < 0.0) {
            return Err(Error::invalid(format!("kernel profile increases at x = {x}")));
        }
        if proto.profile_slope(mf) >= 0.0 {
            return Err(Error::invalid("kernel profile increases beyond x_max"));
        }

        let gv: Vec<f64> = (0..=m).map(|x| proto.profile(x as f64)).collect();
        let tail_m = proto.profile_tail_sum(mf);
        let mut s = Sum::default();
        for x in (1..=m).rev() {
            s.add(2.0 * gv[x]);
        }
        s.add(2.0 * tail_m);
        s.add(gv[0]);
        let total = s.value();
        let c = 1.0 / total;
        proto.norm = c;
        proto.tail_error = proto.tail_error_estimate(mf) / total;
        if proto.tail_error > spec.tail_tol {
            return Err(Error::invalid(format!(
                "x_max = {m} too small: tail error estimate {:.3e} exceeds tail_tol {:.3e}",
                proto.tail_error, spec.tail_tol
            )));
        }

        proto.j = gv.iter().map(|v| c * v).collect();
        let mut tail_j = vec![0.0; m + 1];
        let mut acc = Sum::default();
        acc.add(c * tail_m);
        tail_j[m] = acc.value();
        for n in (0..m).rev() {
            acc.add(proto.j[n + 1]);
            tail_j[n] = acc.value();
        }
        proto.tail_j = tail_j;

        proto.mubar = diffs.iter().enumerate().map(|(k, d)| (2 * k + 1) as f64 * c * d).collect();
        proto.mubar_beyond = proto.tail_mubar(m as u64 + 1);
        proto.alias = WeightedAliasIndex::new(proto.mubar.clone())
            .map_err(|e| Error::numerical(format!("alias table: {e}")))?;

        let mut mom = [Sum::default(); N_MOMENTS];
        for x in 1..=m {
            let r2 = (x as f64 / mf).powi(2);
            let mut p = proto.j[x];
            for slot in mom.iter_mut().skip(1) {
                p *= r2;
                slot.add(p);
            }
        }
        for (k, slot) in mom.iter().enumerate() {
            proto.moments[k] = slot.value();
        }

        proto.hat = proto.build_hat_table();
        // the log-power tail has no closed form, so tabulate far below the series range too
        if kappa != 0.0 {
            proto.far = Some(HatTable::build(&proto, FAR_THETA.ln(), proto.hat.u0, FAR_NODES_PER_DECADE));
        }
        Ok(proto)
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    pub fn x_max(&self) -> usize {
        self.spec.x_max
    }

    /// Normalizing constant `c` with `J = c φ(|x|)(1+|x|)^{-1-γ}`.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Estimated relative error of the analytic tail continuation.
    pub fn tail_error(&self) -> f64 {
        self.tail_error
    }

    /// `J(x)` for any integer `x`.
    #[inline]
    pub fn j(&self, x: i64) -> f64 {
        let a = x.unsigned_abs();
        if a as usize <= self.spec.x_max {
            self.j[a as usize]
        } else {
            self.norm * self.profile(a as f64)
        }
    }

    /// Tabulated `J(0..=x_max)`.
    pub fn j_values(&self) -> &[f64] {
        &self.j
    }

    /// `Σ_{ℓ > n} J(ℓ)`.
    pub fn tail_j(&self, n: u64) -> f64 {
        if n as usize <= self.spec.x_max {
            self.tail_j[n as usize]
        } else {
            self.norm * self.profile_tail_sum(n as f64)
        }
    }

    /// `μ̄(k) = (2k+1)(J(k) - J(k+1))`.
    pub fn mubar(&self, k: u64) -> f64 {
        if k as usize <= self.spec.x_max {
            self.mubar[k as usize]
        } else {
            (2 * k + 1) as f64 * self.norm * self.profile_diff(k as f64)
        }
    }

    /// Smooth continuation of `μ̄` to real `x > x_max`; agrees with
    /// [`Kernel::mubar`] at integers.
    pub fn mubar_real(&self, x: f64) -> f64 {
        (2.0 * x + 1.0) * self.norm * self.profile_diff(x)
    }

    /// Tabulated `μ̄(0..=x_max)`.
    pub fn mubar_values(&self) -> &[f64] {
        &self.mubar
    }

    /// `Σ_{ℓ ≥ n} μ̄(ℓ) = (2n+1) J(n) + 2 Σ_{ℓ > n} J(ℓ)`.
    pub fn tail_mubar(&self, n: u64) -> f64 {
        (2 * n + 1) as f64 * self.j(n as i64) + 2.0 * self.tail_j(n)
    }

    /// Same as [`Kernel::tail_mubar`] for a real threshold: `Σ_{ℓ ≥ ⌈x⌉} μ̄(ℓ)`.
    pub fn tail_mubar_real(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        let n = x.ceil();
        if n >= AMPLITUDE_CAP as f64 {
            let nf = n;
            return (2.0 * nf + 1.0) * self.norm * self.profile(nf) + 2.0 * self.norm * self.profile_tail_sum(nf);
        }
        self.tail_mubar(n as u64)
    }

    /// Draws an amplitude `U ~ μ̄`. Table part by alias sampling, tail by
    /// inverting the analytic survival function.
    pub fn sample_jump_amplitude<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.gen();
        if u < self.mubar_beyond {
            let w = (1.0 - u / self.mubar_beyond) * self.mubar_beyond;
            self.invert_tail(w.max(f64::MIN_POSITIVE))
        } else {
            self.alias.sample(rng) as u64
        }
    }

    /// Draws a displacement with law `J`.
    pub fn sample_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let u = self.sample_jump_amplitude(rng) as i64;
        rng.gen_range(-u..=u)
    }

    fn invert_tail(&self, w: f64) -> u64 {
        let mut lo = self.spec.x_max as u64 + 1;
        let mut hi = lo.saturating_mul(2);
        while self.tail_mubar_real(hi as f64) >= w {
            if hi >= AMPLITUDE_CAP {
                return AMPLITUDE_CAP;
            }
            lo = hi;
            hi = hi.saturating_mul(2).min(AMPLITUDE_CAP);
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.tail_mubar_real(mid as f64) >= w {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    // ---- profile g(u) = φ(u)(1+u)^{-1-γ} -------------------------------------

    #[inline]
    fn profile(&self, u: f64) -> f64 {
        self.spec.phi.eval(u) * (1.0 + u).powf(-1.0 - self.spec.gamma)
    }

    fn profile_slope(&self, u: f64) -> f64 {
        self.profile(u) * (self.spec.phi.log_slope(u) - (1.0 + self.spec.gamma) / (1.0 + u))
    }

    /// `g(x) - g(x+1)` without cancellation.
    fn profile_diff(&self, x: f64) -> f64 {
        let a = 1.0 + self.spec.gamma;
        let base = (1.0 + x).powf(-a);
        let one_minus_r = -(a * (-1.0 / (2.0 + x)).ln_1p()).exp_m1();
        match self.spec.phi {
            SlowVariation::Constant => base * one_minus_r,
            SlowVariation::LogPower { kappa } => {
                let l0 = (E + x).ln();
                let step = ((1.0 / (E + x)).ln_1p() / l0).ln_1p();
                let phi0 = l0.powf(kappa);
                let dphi = phi0 * (kappa * step).exp_m1();
                base * (phi0 * one_minus_r - dphi * (1.0 - one_minus_r))
            }
        }
    }

    /// `∫_a^∞ g(u) du`.
    fn profile_tail(&self, a: f64) -> f64 {
        let g = self.spec.gamma;
        match self.spec.phi {
            SlowVariation::Constant => (1.0 + a).powf(-g) / g,
            SlowVariation::LogPower { kappa } => {
                let l = (1.0 + a).ln();
                let y = (-g * l).exp();
                let f = |v: f64| {
                    let big = l + v / g;
                    let lnu = big + ((E - 1.0) * (-big).exp()).ln_1p();
                    lnu.powf(kappa) * (-v).exp()
                };
                let mut acc = 0.0;
                let cuts = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 90.0];
                for w in cuts.windows(2) {
                    acc += numeric::gl_panel(numeric::gl20(), w[0], w[1], f);
                }
                acc * y / g
            }
        }
    }

    /// `Σ_{x > n} g(x)` by midpoint Euler-Maclaurin.
    fn profile_tail_sum(&self, n: f64) -> f64 {
        let a = n + 0.5;
        let mut s = self.profile_tail(a) + self.profile_slope(a) / 24.0;
        if let SlowVariation::Constant = self.spec.phi {
            let g = self.spec.gamma;
            let d3 = -(1.0 + g) * (2.0 + g) * (3.0 + g) * (1.0 + a).powf(-4.0 - g);
            s -= 7.0 * d3 / 5760.0;
        }
        s
    }

    /// Magnitude of the first omitted Euler-Maclaurin term at `x_max`.
    fn tail_error_estimate(&self, n: f64) -> f64 {
        let g = self.spec.gamma;
        let a = n + 0.5;
        let phi = self.spec.phi.eval(a).max(1.0);
        match self.spec.phi {
            SlowVariation::Constant => {
                let d5 = (1.0 + g) * (2.0 + g) * (3.0 + g) * (4.0 + g) * (5.0 + g) * (1.0 + a).powf(-6.0 - g);
                31.0 * d5 / 967_680.0
            }
            SlowVariation::LogPower { .. } => {
                let d3 = (1.0 + g) * (2.0 + g) * (3.0 + g) * (1.0 + a).powf(-4.0 - g);
                phi * 7.0 * d3 / 5760.0
            }
        }
    }

    // ---- characteristic exponent ----------------------------------------------

    /// `ĥ(θ) = Σ_x J(x)(1 - cos θx)`, interpolated from a log-log Hermite table
    /// above `0.5/x_max` and evaluated exactly below.
    pub fn char_exponent(&self, theta: f64) -> f64 {
        let th = reduce_angle(theta);
        if th == 0.0 {
            return 0.0;
        }
        let u = th.ln();
        if u >= self.hat.u0 {
            return self.hat.ln_eval(u).exp();
        }
        match &self.far {
            None => self.char_exponent_exact(th),
            Some(far) if u >= far.u0 => far.ln_eval(u).exp(),
            Some(far) => (far.ln_h[0] + far.slope[0] * (u - far.u0)).exp(),
        }
    }

    /// Exact evaluation of `ĥ(θ)` (direct sum over the table plus the analytic tail).
    pub fn char_exponent_exact(&self, theta: f64) -> f64 {
        self.hat_with_slope(reduce_angle(theta)).0
    }

    /// Returns `(ĥ(θ), ĥ'(θ))` for `θ ∈ [0, π]`.
    fn hat_with_slope(&self, th: f64) -> (f64, f64) {
        if th == 0.0 {
            return (0.0, 0.0);
        }
        let mf = self.spec.x_max as f64;
        let (body, dbody) = if th * mf <= SERIES_LIMIT {
            self.body_series(th)
        } else {
            self.body_direct(th)
        };
        let t = self.hat_tail(th);
        // the tail oscillates with period 2π/x_max; step well inside it
        let h = (1e-5 * th).min(1e-3 / mf);
        let dt = (self.hat_tail(th + h) - self.hat_tail(th - h)) / (2.0 * h);
        (body + t, dbody + dt)
    }

    /// `2 Σ_{x=1}^{M} J(x)(1 - cos θx)` by its Taylor series when `θM` is small.
    fn body_series(&self, th: f64) -> (f64, f64) {
        let z = th * self.spec.x_max as f64;
        let z2 = z * z;
        let mut term = 1.0; // z^{2k}/(2k)!
        let mut val = 0.0;
        let mut der = 0.0;
        for k in 1..N_MOMENTS {
            term *= z2 / ((2 * k - 1) * (2 * k)) as f64;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            val += sign * term * self.moments[k];
            der += sign * term * (2 * k) as f64 / th * self.moments[k];
        }
        (2.0 * val, 2.0 * der)
    }

    /// Direct summation with a rotating phasor, four interleaved lanes,
    /// re-anchored every 256 steps.
    fn body_direct(&self, th: f64) -> (f64, f64) {
        let m = self.spec.x_max;
        let half = 0.5 * th;
        let (s4, c4) = (4.0 * half).sin_cos();
        let mut val = Sum::default();
        let mut der = Sum::default();
        let mut x = 1usize;
        while x <= m {
            let block_end = (x + 1024).min(m + 1);
            let mut cs = [(0.0f64, 0.0f64); 4];
            for (l, slot) in cs.iter_mut().enumerate() {
                let (s, c) = (half * (x + l) as f64).sin_cos();
                *slot = (c, s);
            }
            let mut v = [0.0f64; 4];
            let mut d = [0.0f64; 4];
            let mut y = x;
            while y + 3 < block_end {
                for l in 0..4 {
                    let (c, s) = cs[l];
                    let jj = self.j[y + l];
                    v[l] += jj * s * s;
                    d[l] += jj * (y + l) as f64 * s * c;
                    cs[l] = (c * c4 - s * s4, s * c4 + c * s4);
                }
                y += 4;
            }
            while y < block_end {
                let (s, c) = (half * y as f64).sin_cos();
                v[0] += self.j[y] * s * s;
                d[0] += self.j[y] * y as f64 * s * c;
                y += 1;
            }
            val.add(v.iter().sum::<f64>());
            der.add(d.iter().sum::<f64>());
            x = block_end;
        }
        // 2 Σ J (1 - cos) = 4 Σ J sin²(θx/2);  derivative 2 Σ J x sin θx = 4 Σ J x s c
        (4.0 * val.value(), 4.0 * der.value())
    }

    /// `2 Σ_{x > M} J(x)(1 - cos θx)`.
    ///
    /// Poisson summation with the comb cut at `a = M + 1/2` gives the integral
    /// `∫_a^∞ g(u)(1 - cos θu) du` plus boundary terms from the aliased
    /// frequencies `θ + 2πk`, summed in closed form through
    /// `Σ_k (-1)^k/(θ+2πk) = 1/(2 sin(θ/2))`.
    fn hat_tail(&self, th: f64) -> f64 {
        let a0 = self.spec.x_max as f64 + 0.5;
        let body = self.hat_tail_integral(th);
        let (d1, e2) = alias_weights(th);
        let g0 = self.profile(a0);
        let g1 = self.profile_slope(a0);
        // g1/24 + g1 cos(θa) d2 with the cancellation done by hand
        let (s, c) = (th * a0).sin_cos();
        let one_minus_c = 2.0 * (0.5 * th * a0).sin().powi(2);
        let boundary = g0 * s * d1 + g1 * (one_minus_c / 24.0 + c * e2);
        2.0 * self.norm * (body + boundary)
    }

    /// `∫_{M+1/2}^∞ g(u)(1 - cos θu) du`.
    fn hat_tail_integral(&self, th: f64) -> f64 {
        let g = self.spec.gamma;
        let a0 = self.spec.x_max as f64 + 0.5;
        match self.spec.phi {
            SlowVariation::Constant => {
                // v = 1 + u,  1 - cos(θv - θ) = cosθ (1 - cos θv) + (1 - cosθ) - sinθ sin θv
                let a = a0 + 1.0;
                let reg = numeric::osc_tail_reg(g, th * a);
                let scale = th.powf(g);
                let rc = -scale * reg.re;
                let rs = scale * reg.im;
                let (s, c) = th.sin_cos();
                let one_minus_c = 2.0 * (0.5 * th).sin().powi(2);
                c * rc + one_minus_c * a.powf(-g) / g - s * rs
            }
            SlowVariation::LogPower { .. } => self.hat_tail_numeric(th, a0),
        }
    }

    fn hat_tail_numeric(&self, th: f64, a0: f64) -> f64 {
        let period = 2.0 * PI / th;
        let b = period * (a0.max(64.0 * period) / period).ceil();
        let f = |u: f64| self.profile(u) * 2.0 * (0.5 * th * u).sin().powi(2);
        let mut acc = Sum::default();
        let mut lo = a0;
        let knee = (1.0 / th).min(b);
        while lo < knee {
            let hi = (2.0 * lo).min(knee);
            acc.add(numeric::gl_panel(numeric::gl20(), lo, hi, f));
            lo = hi;
        }
        let quarter = 0.25 * period;
        while lo < b {
            let hi = (lo + quarter).min(b);
            acc.add(numeric::gl_panel(numeric::gl10(), lo, hi, f));
            lo = hi;
        }
        // θb ∈ 2πℤ: ∫_b^∞ g cos θu du = -g'(b)/θ² + O(θ^{-4})
        acc.add(self.profile_tail(b));
        acc.add(self.profile_slope(b) / (th * th));
        acc.value()
    }

    fn build_hat_table(&self) -> HatTable {
        let theta_lo = SERIES_LIMIT / self.spec.x_max as f64;
        HatTable::build(self, theta_lo.ln(), PI.ln(), HAT_NODES_PER_DECADE)
    }
}

/// `(Σ_{k≠0} (-1)^k/(θ+2πk), 1/24 + Σ_{k≠0} (-1)^k/(θ+2πk)²)` for `θ ∈ [0, π]`.
fn alias_weights(th: f64) -> (f64, f64) {
    if th < 1e-2 {
        let t2 = th * th;
        (th / 24.0 + 7.0 * th * t2 / 5760.0, -7.0 * t2 / 1920.0)
    } else {
        let s = (0.5 * th).sin();
        (0.5 / s - 1.0 / th, (0.5 * th).cos() / (4.0 * s * s) - 1.0 / (th * th) + 1.0 / 24.0)
    }
}

/// Maps `θ` to `[0, π]` using evenness and `2π`-periodicity.
#[inline]
pub fn reduce_angle(theta: f64) -> f64 {
    let mut t = theta.abs();
    if t > PI {
        t %= 2.0 * PI;
        if t > PI {
            t = 2.0 * PI - t;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn small(gamma: f64) -> Kernel {
        Kernel::build(KernelSpec::new(gamma).with_x_max(1 << 14)).unwrap()
    }

    fn half() -> &'static Kernel {
        static K: OnceLock<Kernel> = OnceLock::new();
        K.get_or_init(|| small(0.5))
    }

    /// Brute-force `Σ_{|x| ≤ n} J(x)` plus a crude integral for the remainder.
    fn brute_mass(k: &Kernel, n: u64) -> f64 {
        let g = k.gamma();
        let mut s = Sum::default();
        for x in (1..=n).rev() {
            s.add(2.0 * k.norm() * (1.0 + x as f64).powf(-1.0 - g));
        }
        s.add(k.norm());
        // Σ_{x>n} (1+x)^{-1-g} ≈ ∫_{n+1/2}^∞, next term of order n^{-2-g}
        s.add(2.0 * k.norm() * (n as f64 + 1.5).powf(-g) / g);
        s.value()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Kernel::build(KernelSpec::new(1.2)).is_err());
        assert!(Kernel::build(KernelSpec::new(0.0)).is_err());
        assert!(Kernel::build(KernelSpec::new(0.5).with_x_max(100)).is_err());
        let mut spec = KernelSpec::new(0.5).with_x_max(1 << 10);
        spec.tail_tol = 1e-30;
        assert!(Kernel::build(spec).is_err());
        let bad = KernelSpec::new(0.5).with_phi(SlowVariation::LogPower { kappa: 40.0 }).with_x_max(1 << 10);
        assert!(Kernel::build(bad).is_err());
    }

    #[test]
    fn normalization_against_independent_sum() {
        let k = half();
        let brute = brute_mass(k, 20_000_000);
        assert!((brute - 1.0).abs() < 1e-10, "{brute}");
        let mut s = Sum::default();
        s.add(k.j(0));
        for x in 1..=k.x_max() {
            s.add(2.0 * k.j(x as i64));
        }
        s.add(2.0 * k.tail_j(k.x_max() as u64));
        assert!((s.value() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn mubar_telescopes_to_one() {
        for k in [half(), &small(0.3)] {
            let mut s = Sum::default();
            for v in k.mubar_values() {
                s.add(*v);
            }
            s.add(k.tail_mubar(k.x_max() as u64 + 1));
            assert!((s.value() - 1.0).abs() < 1e-14, "{}", s.value() - 1.0);
        }
    }

    #[test]
    fn tail_mubar_matches_direct_partial_sums() {
        let k = half();
        for &n in &[0u64, 1, 7, 100, 5000] {
            let mut s = Sum::default();
            for l in n..=k.x_max() as u64 {
                s.add(k.mubar(l));
            }
            s.add(k.tail_mubar(k.x_max() as u64 + 1));
            assert!((s.value() - k.tail_mubar(n)).abs() < 1e-13, "n={n}");
        }
        assert!((k.tail_mubar(0) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn tail_mubar_ratio_limit() {
        // Σ_{ℓ≥n} μ̄(ℓ) / (n J(n)) → 2(1+γ)/γ; equals 5 at γ = 2/3
        let k = Kernel::build(KernelSpec::new(2.0 / 3.0).with_x_max(1 << 17)).unwrap();
        let n = 100_000u64;
        let r = k.tail_mubar(n) / (n as f64 * k.j(n as i64));
        assert!((r / 5.0 - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn log_power_kernel_is_normalized_and_monotone() {
        let spec = KernelSpec::new(2.0 / 3.0).with_phi(SlowVariation::LogPower { kappa: 1.0 }).with_x_max(1 << 12);
        let k = Kernel::build(spec).unwrap();
        let j = k.j_values();
        assert!(j.windows(2).all(|w| w[1] <= w[0]));
        // independent oracle: long direct sum plus numerically integrated remainder
        let c = k.norm();
        let gfun = |u: f64| (E + u).ln() * (1.0 + u).powf(-5.0 / 3.0);
        let mut s = Sum::default();
        for x in (1..=4_000_000u64).rev() {
            s.add(2.0 * c * gfun(x as f64));
        }
        s.add(c * gfun(0.0));
        let a = 4_000_000.5f64;
        let rest = numeric::integrate(|v| gfun(a * v.exp()) * a * v.exp(), 0.0, 80.0, 1e-20, 1e-12);
        s.add(2.0 * c * rest);
        assert!((s.value() - 1.0).abs() < 1e-10, "{}", s.value() - 1.0);
    }

    #[test]
    fn char_exponent_at_pi_matches_brute_force() {
        let k = Kernel::build(KernelSpec::new(0.5)).unwrap();
        // 4 Σ_{odd x} J(x), summed to 10^7; remainder 2∫_N^∞ J by midpoint rule with spacing 2
        let n = 10_000_000u64;
        let mut s = Sum::default();
        let mut x = n - 1;
        loop {
            s.add(4.0 * k.j(x as i64));
            if x == 1 {
                break;
            }
            x -= 2;
        }
        s.add(2.0 * k.norm() * (1.0 + n as f64).powf(-0.5) / 0.5);
        let direct = s.value();
        let got = k.char_exponent(PI);
        assert!((got / direct - 1.0).abs() < 1e-6, "{got} {direct}");
        assert!((k.char_exponent_exact(PI) / direct - 1.0).abs() < 1e-9);
    }

    #[test]
    fn char_exponent_table_matches_exact_evaluation() {
        let k = half();
        let mut th = 1e-9;
        while th < 3.1 {
            let a = k.char_exponent(th);
            let b = k.char_exponent_exact(th);
            assert!((a / b - 1.0).abs() < 1e-8, "θ={th} {a} {b}");
            th *= 1.37;
        }
    }

    #[test]
    fn char_exponent_brute_force_midrange() {
        let k = half();
        for &th in &[0.3, 1.0, 2.2] {
            let mut s = Sum::default();
            for x in (1..=4_000_000i64).rev() {
                s.add(2.0 * k.j(x) * (1.0 - (th * x as f64).cos()));
            }
            // remainder: 2 Σ_{x>N} J(x) minus an oscillatory part of order J(N)/θ
            s.add(2.0 * k.tail_j(4_000_000));
            let got = k.char_exponent_exact(th);
            assert!((got - s.value()).abs() < 1e-8, "θ={th} {got} {}", s.value());
        }
    }

    #[test]
    fn char_exponent_power_law_near_zero() {
        for &g in &[0.4, 0.75] {
            let k = small(g);
            let (a, b) = (1e-4f64, 1e-2f64);
            let slope = (k.char_exponent(b) / k.char_exponent(a)).ln() / (b / a).ln();
            assert!((slope - g).abs() < 0.02, "γ={g} slope {slope}");
        }
        // leading constant: ĥ(θ) θ^{-γ} → 2c Γ(1-γ) cos(πγ/2)/γ
        let k = half();
        let lead = 2.0 * k.norm() * numeric::gamma(0.5) * (PI / 4.0).cos() / 0.5;
        let th = 1e-12;
        assert!((k.char_exponent(th) / th.sqrt() / lead - 1.0).abs() < 1e-4);
    }

    #[test]
    fn log_power_char_exponent_consistent() {
        let spec = KernelSpec::new(0.6).with_phi(SlowVariation::LogPower { kappa: 1.0 }).with_x_max(1 << 12);
        let k = Kernel::build(spec).unwrap();
        for &th in &[0.5, 2.0] {
            let mut s = Sum::default();
            for x in (1..=2_000_000i64).rev() {
                s.add(2.0 * k.j(x) * (1.0 - (th * x as f64).cos()));
            }
            s.add(2.0 * k.tail_j(2_000_000));
            assert!((k.char_exponent(th) - s.value()).abs() < 1e-7, "θ={th}");
        }
        let mut th = 1e-7;
        while th < 3.0 {
            assert!((k.char_exponent(th) / k.char_exponent_exact(th) - 1.0).abs() < 1e-8);
            th *= 3.1;
        }
    }

    #[test]
    fn sampler_frequencies_match_mubar() {
        let k = half();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 400_000;
        let mut counts = [0u64; 6];
        let mut big = 0u64;
        let thr = 1000u64;
        for _ in 0..n {
            let u = k.sample_jump_amplitude(&mut rng);
            if (u as usize) < counts.len() {
                counts[u as usize] += 1;
            }
            if u >= thr {
                big += 1;
            }
        }
        for (kk, &c) in counts.iter().enumerate() {
            let p = k.mubar(kk as u64);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(((c as f64 / n as f64) - p).abs() < 5.0 * se, "k={kk}");
        }
        let p = k.tail_mubar(thr);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!(((big as f64 / n as f64) - p).abs() < 5.0 * se);
    }

    #[test]
    fn sampler_tail_beyond_table() {
        let k = Kernel::build(KernelSpec::new(0.4).with_x_max(1 << 10)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let thr = [5_000u64, 1_000_000];
        let mut hits = [0u64; 2];
        for _ in 0..n {
            let u = k.sample_jump_amplitude(&mut rng);
            for (h, &t) in hits.iter_mut().zip(&thr) {
                if u >= t {
                    *h += 1;
                }
            }
        }
        for (h, &t) in hits.iter().zip(&thr) {
            let p = k.tail_mubar(t);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(((*h as f64 / n as f64) - p).abs() < 5.0 * se, "t={t}");
        }
    }

    #[test]
    fn displacement_is_uniform_given_amplitude() {
        // the enriched representation reproduces J: P(V = x) = J(x)
        let k = small(0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 300_000;
        let mut c = [0u64; 4];
        for _ in 0..n {
            let v = k.sample_jump(&mut rng);
            if (0..4).contains(&v) {
                c[v as usize] += 1;
            }
        }
        for (x, &cnt) in c.iter().enumerate() {
            let p = k.j(x as i64);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(((cnt as f64 / n as f64) - p).abs() < 5.0 * se, "x={x}");
        }
    }
}
