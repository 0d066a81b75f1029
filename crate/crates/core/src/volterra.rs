//! Lower-triangular Toeplitz recursions `x_n = f_n + Σ_{k=1}^{n-1} g_{n-k} x_k`.
//!
//! Solved by divide and conquer: the left half is finished first, its effect
//! on the right half is one FFT convolution, then the right half recurses.
//! Cost `O(n log² n)`.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

const DIRECT_BELOW: usize = 96;

/// Solves the recursion for `n = 1..f.len()`; `x_0 = f_0` is taken as given
/// and does not enter the sum. `g` must have at least `f.len()` entries.
pub fn solve(f: &[f64], g: &[f64]) -> Vec<f64> {
    let n = f.len();
    assert!(g.len() >= n, "kernel shorter than right-hand side");
    let mut x = f.to_vec();
    if n <= 1 {
        return x;
    }
    let mut planner = FftPlanner::new();
    cdq(&mut x, g, 1, n, &mut planner);
    x
}

/// Plain `O(n²)` evaluation; the reference for [`solve`].
pub fn solve_direct(f: &[f64], g: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut x = f.to_vec();
    for i in 2..n {
        let mut acc = 0.0;
        for k in 1..i {
            acc += g[i - k] * x[k];
        }
        x[i] += acc;
    }
    x
}

// On entry x[l..r] holds f plus all contributions from indices < l.
fn cdq(x: &mut [f64], g: &[f64], l: usize, r: usize, planner: &mut FftPlanner<f64>) {
    if r - l <= DIRECT_BELOW {
        for i in l..r {
            let mut acc = 0.0;
            for k in l..i {
                acc += g[i - k] * x[k];
            }
            x[i] += acc;
        }
        return;
    }
    let m = l + (r - l) / 2;
    cdq(x, g, l, m, planner);
    // contributions of x[l..m] to x[m..r]: Σ_k g[i-k] x[k]
    let a = &x[l..m];
    let b = &g[1..r - l];
    let conv = convolve(a, b, planner);
    // conv[p] = Σ a[q] b[p-q] = Σ x[l+q] g[p-q+1], target i = l + p + 1
    for i in m..r {
        x[i] += conv[i - l - 1];
    }
    cdq(x, g, m, r, planner);
}

fn convolve(a: &[f64], b: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let len = a.len() + b.len() - 1;
    let size = len.next_power_of_two();
    let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fa.resize(size, Complex64::new(0.0, 0.0));
    let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fb.resize(size, Complex64::new(0.0, 0.0));
    let fwd = planner.plan_fft_forward(size);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (p, q) in fa.iter_mut().zip(&fb) {
        *p *= q;
    }
    planner.plan_fft_inverse(size).process(&mut fa);
    let s = 1.0 / size as f64;
    fa.iter().take(len).map(|c| c.re * s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn geometric_kernel_has_closed_form() {
        // g_j = q for all j gives x_n = f_1 (1+q)^{n-1} when f_n = f_1 δ_{n1}... use f ≡ 1:
        // x_n = 1 + q Σ_{k<n} x_k  ⇒  x_n = (1+q)^{n-1}
        let n = 700;
        let q = 0.01;
        let f = vec![1.0; n];
        let g = vec![q; n];
        let x = solve(&f, &g);
        for i in 1..n {
            let want = (1.0 + q).powi(i as i32 - 1);
            assert!((x[i] / want - 1.0).abs() < 1e-12, "{i}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn fast_solver_matches_direct(
            f in prop::collection::vec(0.0f64..1.0, 2..600),
            scale in 0.0f64..0.05,
        ) {
            let n = f.len();
            let g: Vec<f64> = (0..n).map(|j| scale / (1.0 + j as f64).powf(1.3)).collect();
            let a = solve(&f, &g);
            let b = solve_direct(&f, &g);
            for i in 0..n {
                prop_assert!((a[i] - b[i]).abs() <= 1e-12 * (1.0 + b[i].abs()));
            }
        }
    }
}
