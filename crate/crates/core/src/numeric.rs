//! Quadrature, special functions, interpolation and summation helpers.

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64;
use std::num::NonZeroUsize;
use std::sync::OnceLock;

static GL10: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
static GL20: OnceLock<Vec<(f64, f64)>> = OnceLock::new();

fn rule(n: usize) -> Vec<(f64, f64)> {
    let gl = GaussLegendre::new(NonZeroUsize::new(n).expect("nonzero degree"));
    let mut pairs = gl.as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

/// Ten-point Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gl10() -> &'static [(f64, f64)] {
    GL10.get_or_init(|| rule(10))
}

/// Twenty-point Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gl20() -> &'static [(f64, f64)] {
    GL20.get_or_init(|| rule(20))
}

/// Applies a fixed Gauss-Legendre rule on `[a, b]`.
#[inline]
pub fn gl_panel<F: FnMut(f64) -> f64>(pairs: &[(f64, f64)], a: f64, b: f64, mut f: F) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let mut acc = 0.0;
    for &(x, w) in pairs {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Globally adaptive bisection quadrature built on a ten-point Gauss-Legendre rule.
///
/// A panel is accepted once its two halves agree with the whole to within
/// `max(abs_tol * width / (b - a), rel_tol * |estimate|)`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let pairs = gl10();
    let span = b - a;
    let mut total = Sum::default();
    let whole = gl_panel(pairs, a, b, &mut f);
    let mut stack = vec![(a, b, whole, 0u32)];
    while let Some((lo, hi, est, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = gl_panel(pairs, lo, mid, &mut f);
        let right = gl_panel(pairs, mid, hi, &mut f);
        let refined = left + right;
        let tol = (abs_tol * (hi - lo) / span).max(rel_tol * refined.abs());
        if (refined - est).abs() <= tol || depth >= 48 {
            total.add(refined);
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    total.value()
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    pub fn value(&self) -> f64 {
        self.s + self.c
    }
}

pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

/// `∫_z^∞ w^{-1-g} (e^{iw} - 1) dw` for `0 < g < 1`, `z > 0`.
///
/// Power series below `z = 2`, Legendre continued fraction for the upper
/// incomplete gamma function above.
pub fn osc_tail_reg(g: f64, z: f64) -> Complex64 {
    if z < 2.0 {
        // Γ(-g) e^{-iπg/2} - Σ_{k≥1} i^k z^{k-g} / (k! (k-g))
        let full = Complex64::from_polar(gamma(-g), -0.5 * std::f64::consts::PI * g);
        let mut series = Complex64::new(0.0, 0.0);
        let zg = z.powf(-g);
        let mut term = 1.0; // z^k / k!
        let mut ik = Complex64::new(1.0, 0.0);
        for k in 1..80 {
            term *= z / k as f64;
            ik *= Complex64::new(0.0, 1.0);
            let add = ik * (term * zg / (k as f64 - g));
            series += add;
            if add.norm() < 1e-18 * series.norm().max(1e-300) {
                break;
            }
        }
        full - series
    } else {
        osc_tail(g, z) - z.powf(-g) / g
    }
}

/// `∫_z^∞ w^{-1-g} e^{iw} dw` for `z ≥ 2` by continued fraction.
fn osc_tail(g: f64, z: f64) -> Complex64 {
    let s = -g;
    let x = Complex64::new(0.0, -z);
    let tiny = 1e-300;
    let mut b = x + 1.0 - s;
    let mut c = Complex64::new(1.0 / tiny, 0.0);
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - s);
        b += 2.0;
        d = an * d + b;
        if d.norm() < tiny {
            d = Complex64::new(tiny, 0.0);
        }
        c = b + an / c;
        if c.norm() < tiny {
            c = Complex64::new(tiny, 0.0);
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).norm() < 1e-16 {
            break;
        }
    }
    Complex64::from_polar(z.powf(-g), z) * h
}

/// `E_p(x) = ∫_1^∞ e^{-xs} s^{-p} ds` for `p > 1`, `x ≥ 0`.
pub fn expint(p: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 1.0 / (p - 1.0);
    }
    let vmax = (46.0 / (p - 1.0)).min((750.0 / x).ln().max(1.0));
    integrate(|v| (-x * v.exp() + (1.0 - p) * v).exp(), 0.0, vmax, 1e-17, 1e-13)
}

/// `∫_1^∞ (1 - e^{-xs}) s^{-p} ds = 1/(p-1) - E_p(x)` without cancellation.
pub fn expint_complement(p: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let vmax = 46.0 / (p - 1.0);
    let body = integrate(|v| -(-x * v.exp()).exp_m1() * ((1.0 - p) * v).exp(), 0.0, vmax, 1e-18, 1e-13);
    let rest = -(-x * vmax.exp()).exp_m1() * ((1.0 - p) * vmax).exp() / (p - 1.0);
    body + rest
}

/// Four-point Lagrange interpolation at `x` through `(xs[i], ys[i])`.
#[inline]
pub fn lagrange4(xs: [f64; 4], ys: [f64; 4], x: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        let mut l = 1.0;
        for j in 0..4 {
            if i != j {
                l *= (x - xs[j]) / (xs[i] - xs[j]);
            }
        }
        acc += l * ys[i];
    }
    acc
}

/// Cubic Hermite interpolation on `[x0, x1]` with values and slopes.
#[inline]
pub fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * d1
}

/// Index `i` such that `xs[i] <= x < xs[i + 1]`, clamped to the valid range.
#[inline]
pub fn bracket(xs: &[f64], x: f64) -> usize {
    let i = xs.partition_point(|&v| v <= x);
    i.saturating_sub(1).min(xs.len() - 2)
}

/// Four-point stencil start for interpolation on a sorted grid.
#[inline]
pub fn stencil(len: usize, i: usize) -> usize {
    i.saturating_sub(1).min(len - 4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_rule_handles_endpoint_singularity() {
        let v = integrate(|x| x.sqrt().ln(), 0.0, 1.0, 1e-13, 1e-13);
        assert!((v + 0.5).abs() < 1e-10, "{v}");
    }

    #[test]
    fn oscillatory_tail_matches_direct_quadrature() {
        for &g in &[0.3, 0.5, 0.8] {
            for &z in &[0.1, 1.0, 1.9, 2.1, 5.0, 40.0] {
                let got = osc_tail_reg(g, z);
                // direct: finite part plus continued tail past a far cut-off
                let zmax = z + 2.0 * std::f64::consts::PI * 4000.0;
                let re = integrate(|w| w.powf(-1.0 - g) * (w.cos() - 1.0), z, zmax, 1e-15, 1e-13);
                let im = integrate(|w| w.powf(-1.0 - g) * w.sin(), z, zmax, 1e-15, 1e-13);
                // beyond zmax: -∫ w^{-1-g} dw plus the leading oscillatory term
                let a = 1.0 + g;
                let re = re - zmax.powf(-g) / g - zmax.sin() * zmax.powf(-a);
                let im = im + zmax.cos() * zmax.powf(-a);
                let scale = z.powf(-1.0 - g).max(1e-3);
                assert!((got.re - re).abs() < 1e-6 * scale.max(1.0), "g={g} z={z} {} {}", got.re, re);
                assert!((got.im - im).abs() < 1e-6 * scale.max(1.0), "g={g} z={z} {} {}", got.im, im);
            }
        }
    }

    #[test]
    fn exponential_integral_pair_sums_to_pole() {
        for &p in &[1.2, 2.0, 2.5, 3.3] {
            for &x in &[1e-9, 1e-3, 0.5, 4.0, 80.0] {
                let e = expint(p, x);
                let d = expint_complement(p, x);
                assert!((e + d - 1.0 / (p - 1.0)).abs() < 1e-10 / (p - 1.0), "p={p} x={x}");
            }
        }
        // E_2(1) = e^{-1} - E_1(1)
        assert!((expint(2.0, 1.0) - 0.148_495_506_775_922).abs() < 1e-12);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = Sum::default();
        s.add(1.0);
        for _ in 0..1000 {
            s.add(1e-17);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-14).abs() < 1e-20);
    }
}
