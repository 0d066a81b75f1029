//! Transition probabilities of the rate-one walk `W` with jump law `J`.
//!
//! `P(W_t = x) = (1/π) ∫_0^π e^{-t ĥ(θ)} cos(θx) dθ`. The return probability
//! `p0(t) = P(W_t = 0)` is computed by adaptive quadrature in `ln θ` and
//! cached on a hybrid grid (uniform up to `t = 10`, geometric beyond).
//! Full displacement laws come from an FFT of the characteristic function on
//! `N` points; the periodization error `Σ_{m≠0} P(W_t = y + mN)` is removed
//! with the large-displacement expansion of the law.

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::numeric::{self, Sum};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

const LIN_END: f64 = 10.0;
const LIN_STEP: f64 = 0.01;
const GEO_PER_DECADE: f64 = 100.0;
const T_MAX: f64 = 1e12;
const CELL_LIN: f64 = 0.25;
const CELL_PER_DECADE: f64 = 8.0;

/// Largest displacement stored densely in a [`DisplacementLaw`].
pub const Y_DENSE: usize = 1024;
const FAR_PER_OCTAVE: f64 = 16.0;
const MIN_FFT: usize = 1 << 16;
const MAX_FFT: usize = 1 << 23;
const SPREAD_FACTOR: f64 = 128.0;

/// `P(W_t = 0)` by quadrature.
pub fn p0_direct(kernel: &Kernel, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let theta_star = solve_hat_level(kernel, 1.0 / t);
    let theta_c = solve_hat_level(kernel, 1e-6 / t).min(1e-6);
    let h_c = kernel.char_exponent(theta_c);
    let head = theta_c * (1.0 - t * h_c / (1.0 + kernel.gamma()));
    let abs_tol = 1e-16 * theta_star.min(PI);
    let body = numeric::integrate(
        |u| {
            let th = u.exp();
            (-t * kernel.char_exponent(th)).exp() * th
        },
        theta_c.ln(),
        PI.ln(),
        abs_tol,
        1e-13,
    );
    (head + body) / PI
}

/// `P(W_t = y)` by quadrature; meant for moderate `|y|` and `t`.
pub fn prob_direct(kernel: &Kernel, t: f64, y: i64) -> f64 {
    if y == 0 {
        return p0_direct(kernel, t);
    }
    if t <= 0.0 {
        return 0.0;
    }
    let yf = y as f64;
    let theta_c = solve_hat_level(kernel, 1e-6 / t).min(1e-6 / (1.0 + yf.abs()));
    let h_c = kernel.char_exponent(theta_c);
    let head = theta_c * (1.0 - t * h_c / (1.0 + kernel.gamma()) - (yf * theta_c).powi(2) / 6.0);
    // split at the zeros of cos(θy) so each panel sees at most one oscillation
    let mut knots = vec![theta_c.ln()];
    let period = PI / yf.abs();
    let mut th = 0.5 * period;
    while th < PI {
        if th > theta_c {
            knots.push(th.ln());
        }
        th += period;
    }
    knots.push(PI.ln());
    let mut body = Sum::default();
    for w in knots.windows(2) {
        body.add(numeric::integrate(
            |u| {
                let th = u.exp();
                (-t * kernel.char_exponent(th)).exp() * (th * yf).cos() * th
            },
            w[0],
            w[1],
            1e-17,
            1e-12,
        ));
    }
    (head + body.value()) / PI
}

/// Smallest `θ ∈ (0, π]` with `ĥ(θ) = level`, or `π` when `ĥ(π) < level`.
fn solve_hat_level(kernel: &Kernel, level: f64) -> f64 {
    if kernel.char_exponent(PI) <= level {
        return PI;
    }
    let (mut lo, mut hi) = (-700.0f64, PI.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kernel.char_exponent(mid.exp()) < level {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Width `1/θ*` of `W_t`, where `t ĥ(θ*) = 1`.
pub fn spread(kernel: &Kernel, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    1.0 / solve_hat_level(kernel, 1.0 / t)
}

/// `p0(t)` on a hybrid grid with integration nodes and a power-law tail fit.
#[derive(Debug, Clone)]
pub struct ReturnCurve {
    gamma: f64,
    lin: Vec<f64>,
    geo_u0: f64,
    geo_du: f64,
    geo_ln: Vec<f64>,
    nodes: Vec<(f64, f64)>,
    tail_amp: f64,
    tail_exp: f64,
}

impl ReturnCurve {
    pub fn build(kernel: &Kernel) -> Self {
        use rayon::prelude::*;
        let n_lin = (LIN_END / LIN_STEP).round() as usize;
        let lin: Vec<f64> = (0..=n_lin).into_par_iter().map(|i| p0_direct(kernel, i as f64 * LIN_STEP)).collect();

        let geo_u0 = LIN_END.ln();
        let decades = (T_MAX / LIN_END).log10();
        let n_geo = (decades * GEO_PER_DECADE).round() as usize;
        let geo_du = (T_MAX.ln() - geo_u0) / n_geo as f64;
        let geo_ln: Vec<f64> = (0..=n_geo)
            .into_par_iter()
            .map(|i| p0_direct(kernel, (geo_u0 + i as f64 * geo_du).exp()).ln())
            .collect();

        let mut cells = Vec::new();
        let n_cl = (LIN_END / CELL_LIN).round() as usize;
        for i in 0..n_cl {
            cells.push((i as f64 * CELL_LIN, (i + 1) as f64 * CELL_LIN));
        }
        let n_cg = (decades * CELL_PER_DECADE).round() as usize;
        let r = (T_MAX / LIN_END).powf(1.0 / n_cg as f64);
        let mut a = LIN_END;
        for i in 0..n_cg {
            let b = if i + 1 == n_cg { T_MAX } else { a * r };
            cells.push((a, b));
            a = b;
        }
        let rule = numeric::gl20();
        let pts: Vec<(f64, f64)> = cells
            .iter()
            .flat_map(|&(a, b)| rule.iter().map(move |&(x, w)| (0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w)))
            .collect();
        let nodes: Vec<(f64, f64)> = pts.into_par_iter().map(|(t, w)| (t, w * p0_direct(kernel, t))).collect();

        // power law on the last decade
        let k0 = geo_ln.len() - (GEO_PER_DECADE as usize) - 1;
        let xs: Vec<f64> = (k0..geo_ln.len()).map(|i| geo_u0 + i as f64 * geo_du).collect();
        let ys: Vec<f64> = geo_ln[k0..].to_vec();
        let (slope, icept) = crate::stats::linear_fit(&xs, &ys);

        ReturnCurve {
            gamma: kernel.gamma(),
            lin,
            geo_u0,
            geo_du,
            geo_ln,
            nodes,
            tail_amp: icept.exp(),
            tail_exp: -slope,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Interpolated `p0(t)`: cubic in `t` on the uniform part, cubic in
    /// log-log on the geometric part, power law past the grid.
    pub fn p0(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        if t <= LIN_END {
            let pos = t / LIN_STEP;
            let i = (pos.floor() as usize).min(self.lin.len() - 2);
            if (pos - i as f64).abs() < 1e-12 {
                return self.lin[i];
            }
            let s = numeric::stencil(self.lin.len(), i);
            let xs = [s as f64, (s + 1) as f64, (s + 2) as f64, (s + 3) as f64];
            let ys = [self.lin[s], self.lin[s + 1], self.lin[s + 2], self.lin[s + 3]];
            return numeric::lagrange4(xs, ys, pos);
        }
        if t >= T_MAX {
            return self.tail_amp * t.powf(-self.tail_exp);
        }
        let pos = (t.ln() - self.geo_u0) / self.geo_du;
        let i = (pos.floor() as usize).min(self.geo_ln.len() - 2);
        let s = numeric::stencil(self.geo_ln.len(), i);
        let xs = [s as f64, (s + 1) as f64, (s + 2) as f64, (s + 3) as f64];
        let ys = [self.geo_ln[s], self.geo_ln[s + 1], self.geo_ln[s + 2], self.geo_ln[s + 3]];
        numeric::lagrange4(xs, ys, pos).exp()
    }

    /// Grid abscissae and values `(t, p0(t))`.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self.lin.iter().enumerate().map(|(i, &p)| (i as f64 * LIN_STEP, p)).collect();
        out.extend(self.geo_ln.iter().enumerate().skip(1).map(|(i, &l)| ((self.geo_u0 + i as f64 * self.geo_du).exp(), l.exp())));
        out
    }

    /// Largest grid abscissa; past it `p0` is the fitted power law.
    pub fn t_max(&self) -> f64 {
        T_MAX
    }

    /// `(A, p)` with `p0(t) ≈ A t^{-p}` fitted on the last grid decade.
    pub fn tail_fit(&self) -> (f64, f64) {
        (self.tail_amp, self.tail_exp)
    }

    /// Least-squares exponent `-d ln p0 / d ln t` over grid nodes in `[t_lo, t_hi]`.
    pub fn fitted_exponent(&self, t_lo: f64, t_hi: f64) -> f64 {
        let pts: Vec<(f64, f64)> = self.grid().into_iter().filter(|&(t, _)| t >= t_lo && t <= t_hi).collect();
        let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
        -crate::stats::linear_fit(&xs, &ys).0
    }

    /// `∫_0^∞ f(t) p0(t) dt` for smooth `f`, with the power-law tail handled by `tail`,
    /// which receives `(A, p, t_max)` and must return `∫_{t_max}^∞ f(t) A t^{-p} dt`.
    pub fn integrate_against<F, G>(&self, f: F, tail: G) -> f64
    where
        F: Fn(f64) -> f64,
        G: Fn(f64, f64, f64) -> f64,
    {
        let mut s = Sum::default();
        for &(t, w) in &self.nodes {
            s.add(w * f(t));
        }
        s.add(tail(self.tail_amp, self.tail_exp, T_MAX));
        s.value()
    }

    /// `∫_0^∞ p0(t) dt`.
    pub fn integral(&self) -> f64 {
        self.integrate_against(|_| 1.0, |a, p, t0| a * t0.powf(1.0 - p) / (p - 1.0))
    }
}

/// `P(W_t = x)` for `x = 0..=x_range`.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    pub t: f64,
    pub probs: Vec<f64>,
    /// `Σ_{|x| ≤ x_range} P(W_t = x)`.
    pub mass: f64,
}

/// Computes `P(W_t = x)` for `0 ≤ x ≤ x_range`.
///
/// # Errors
/// `t < 0`, or a spread too large for the largest supported transform.
pub fn transition_probs(kernel: &Kernel, t: f64, x_range: usize) -> Result<TransitionTable> {
    if !(t >= 0.0) {
        return Err(Error::invalid("time must be non-negative"));
    }
    if t == 0.0 {
        let mut probs = vec![0.0; x_range + 1];
        probs[0] = 1.0;
        return Ok(TransitionTable { t, probs, mass: 1.0 });
    }
    let n = fft_size(kernel, t, x_range)?;
    let raw = periodized_law(kernel, t, n, &mut FftPlanner::new());
    let images = Images::new(kernel, t, n);
    let probs: Vec<f64> = (0..=x_range).map(|y| images.correct(kernel, y as i64, raw[y])).collect();
    let mass = probs[0] + 2.0 * probs[1..].iter().sum::<f64>();
    Ok(TransitionTable { t, probs, mass })
}

fn fft_size(kernel: &Kernel, t: f64, x_range: usize) -> Result<usize> {
    let need = (SPREAD_FACTOR * spread(kernel, t)).max(8.0 * x_range as f64).max(MIN_FFT as f64);
    if need > MAX_FFT as f64 {
        return Err(Error::numerical(format!(
            "walk at time {t} spreads over {:.3e} sites, beyond the largest transform",
            spread(kernel, t)
        )));
    }
    Ok((need as usize).next_power_of_two())
}

/// `Σ_m P(W_t = y + mN)` for `y = 0..N` by inverse FFT.
fn periodized_law(kernel: &Kernel, t: f64, n: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..=n / 2 {
        let th = 2.0 * PI * j as f64 / n as f64;
        let v = (-t * kernel.char_exponent(th)).exp();
        buf[j] = Complex64::new(v, 0.0);
        if j > 0 && j < n / 2 {
            buf[n - j] = Complex64::new(v, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Periodization correction for an `N`-point transform of the law of `W_t`.
///
/// Each image `P(W_t = z)`, `|z| ≥ N/2`, is approximated by `t J(z)` plus,
/// for pure power-law kernels, the higher terms of the stable large-`z`
/// series `Σ_{k≥2} a_k (tC)^k z^{-1-kγ}`.
#[derive(Debug, Clone)]
struct Images {
    t: f64,
    n: i64,
    gamma: f64,
    coefs: Vec<f64>,
}

impl Images {
    fn new(kernel: &Kernel, t: f64, n: usize) -> Self {
        let gamma = kernel.gamma();
        let mut coefs = Vec::new();
        if matches!(kernel.spec().phi, crate::kernel::SlowVariation::Constant) {
            let c = 2.0 * kernel.norm() * numeric::gamma(1.0 - gamma) * (0.5 * PI * gamma).cos() / gamma;
            let tc = t * c;
            let zmin = 0.5 * n as f64;
            let mut pow = tc;
            let mut fact = 1.0;
            for k in 2..60 {
                pow *= tc;
                fact *= k as f64;
                let kg = k as f64 * gamma;
                let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
                let a = sign * statrs::function::gamma::gamma(kg + 1.0) / fact * (0.5 * PI * kg).sin() / PI * pow;
                coefs.push(a);
                if (a * zmin.powf(-kg)).abs() < 1e-18 * tc * zmin.powf(-gamma) {
                    break;
                }
            }
        }
        Images { t, n: n as i64, gamma, coefs }
    }

    fn image(&self, kernel: &Kernel, z: i64) -> f64 {
        let mut v = self.t * kernel.j(z);
        if !self.coefs.is_empty() {
            let zf = (z as f64).abs();
            let lz = zf.ln();
            let mut acc = 0.0;
            for (i, a) in self.coefs.iter().enumerate() {
                acc += a * (-(i as f64 + 2.0) * self.gamma * lz).exp();
            }
            v += acc / zf;
        }
        v
    }

    /// Removes the images `m ≠ 0` from the periodized value at `y`.
    fn correct(&self, kernel: &Kernel, y: i64, raw: f64) -> f64 {
        let mut img = 0.0;
        for m in 1..=8i64 {
            img += self.image(kernel, m * self.n + y) + self.image(kernel, m * self.n - y);
        }
        // remaining images as an integral over the tail
        let far = 8.5 * self.n as f64;
        let mut rest = self.t * kernel.tail_j(far as u64);
        for (i, a) in self.coefs.iter().enumerate() {
            let kg = (i as f64 + 2.0) * self.gamma;
            rest += a * far.powf(-kg) / kg;
        }
        img += 2.0 * rest / self.n as f64;
        (raw - img).max(raw * 1e-3)
    }
}

/// Law of `W_s` stored densely near the origin, on a geometric grid further
/// out, and past the grid by the large-displacement expansion (pure power
/// laws) or `P(W_s = y) ≈ r J(y)` matched at the grid end.
#[derive(Debug, Clone)]
pub struct DisplacementLaw {
    s: f64,
    dense: Vec<f64>,
    far_u0: f64,
    far_du: f64,
    far_ln: Vec<f64>,
    far_end: f64,
    ratio: f64,
    images: Option<Images>,
}

impl DisplacementLaw {
    fn build(kernel: &Kernel, s: f64, planner: &mut FftPlanner<f64>) -> Result<Self> {
        if s <= 0.0 {
            let mut dense = vec![0.0; Y_DENSE + 1];
            dense[0] = 1.0;
            return Ok(DisplacementLaw {
                s,
                dense,
                far_u0: 0.0,
                far_du: 1.0,
                far_ln: Vec::new(),
                far_end: Y_DENSE as f64,
                ratio: 0.0,
                images: None,
            });
        }
        let n = fft_size(kernel, s, Y_DENSE)?;
        let raw = periodized_law(kernel, s, n, planner);
        let images = Images::new(kernel, s, n);
        let dense: Vec<f64> = (0..=Y_DENSE).map(|y| images.correct(kernel, y as i64, raw[y])).collect();
        let far_end_i = n / 16;
        let far_u0 = (Y_DENSE as f64).ln();
        let octaves = (far_end_i as f64 / Y_DENSE as f64).log2();
        let m = ((octaves * FAR_PER_OCTAVE).round() as usize).max(4);
        let far_du = ((far_end_i as f64).ln() - far_u0) / m as f64;
        // nodes sit on integers; record the exact abscissae through rounding
        let mut far_ln = Vec::with_capacity(m + 1);
        for i in 0..=m {
            let y = (far_u0 + i as f64 * far_du).exp();
            let (y0, y1) = (y.floor() as usize, y.floor() as usize + 1);
            let p0 = images.correct(kernel, y0 as i64, raw[y0]);
            let p1 = images.correct(kernel, y1 as i64, raw[y1.min(n - 1)]);
            let w = y - y0 as f64;
            far_ln.push(((1.0 - w) * p0 + w * p1).ln());
        }
        let far_end = (far_u0 + m as f64 * far_du).exp();
        let end_p = far_ln[m].exp();
        let ratio = end_p / (kernel.norm() * profile_real(kernel, far_end));
        let images = if images.coefs.is_empty() { None } else { Some(images) };
        Ok(DisplacementLaw { s, dense, far_u0, far_du, far_ln, far_end, ratio, images })
    }

    pub fn time(&self) -> f64 {
        self.s
    }

    /// `P(W_s = y)`.
    pub fn prob(&self, kernel: &Kernel, y: i64) -> f64 {
        let a = y.unsigned_abs();
        if a as usize <= Y_DENSE {
            return self.dense[a as usize];
        }
        if self.far_ln.is_empty() {
            return 0.0;
        }
        let af = a as f64;
        if af <= self.far_end {
            let pos = (af.ln() - self.far_u0) / self.far_du;
            let i = (pos.floor() as usize).min(self.far_ln.len() - 2);
            let st = numeric::stencil(self.far_ln.len(), i);
            let xs = [st as f64, (st + 1) as f64, (st + 2) as f64, (st + 3) as f64];
            let ys = [self.far_ln[st], self.far_ln[st + 1], self.far_ln[st + 2], self.far_ln[st + 3]];
            return numeric::lagrange4(xs, ys, pos).exp();
        }
        match &self.images {
            Some(im) => im.image(kernel, y),
            None => self.ratio * kernel.j(y),
        }
    }

    /// `Σ_{|x| ≤ l} P(W_s = x)` for `l ≤ Y_DENSE`.
    pub fn dense_cdf(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dense.len());
        let mut acc = Sum::default();
        acc.add(self.dense[0]);
        out.push(acc.value());
        for p in &self.dense[1..] {
            acc.add(2.0 * p);
            out.push(acc.value());
        }
        out
    }
}

fn profile_real(kernel: &Kernel, y: f64) -> f64 {
    kernel.spec().phi.eval(y) * (1.0 + y).powf(-1.0 - kernel.gamma())
}

/// Thread-safe cache of displacement laws keyed by time, together with the
/// return curve that supplies `P(W_s = 0)`.
pub struct Transitions {
    kernel: Arc<Kernel>,
    curve: Arc<ReturnCurve>,
    laws: Mutex<HashMap<u64, Arc<DisplacementLaw>>>,
    planner: Mutex<FftPlanner<f64>>,
}

impl std::fmt::Debug for Transitions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transitions").field("kernel", &self.kernel).finish()
    }
}

impl Transitions {
    pub fn new(kernel: Arc<Kernel>, curve: Arc<ReturnCurve>) -> Self {
        Transitions { kernel, curve, laws: Mutex::new(HashMap::new()), planner: Mutex::new(FftPlanner::new()) }
    }

    pub fn kernel(&self) -> &Arc<Kernel> {
        &self.kernel
    }

    pub fn curve(&self) -> &Arc<ReturnCurve> {
        &self.curve
    }

    /// Law of `W_s`, computed on first use.
    pub fn law(&self, s: f64) -> Result<Arc<DisplacementLaw>> {
        let key = s.to_bits();
        if let Some(l) = self.laws.lock().expect("law cache").get(&key) {
            return Ok(l.clone());
        }
        let law = {
            let mut planner = self.planner.lock().expect("fft planner");
            Arc::new(DisplacementLaw::build(&self.kernel, s, &mut planner)?)
        };
        self.laws.lock().expect("law cache").insert(key, law.clone());
        Ok(law)
    }

    /// `P(W_s = y)`; the origin always comes from the return curve.
    pub fn prob(&self, s: f64, y: i64) -> Result<f64> {
        if y == 0 {
            return Ok(self.curve.p0(s));
        }
        Ok(self.law(s)?.prob(&self.kernel, y))
    }

    /// Drops cached laws.
    pub fn clear(&self) {
        self.laws.lock().expect("law cache").clear();
    }
}
