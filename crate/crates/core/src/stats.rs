//! Running moments, regression and two-sample tests.

use serde::Serialize;

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Slope, intercept, their standard errors and `R²`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub r2: f64,
}

pub fn regress(xs: &[f64], ys: &[f64]) -> Regression {
    let (slope, intercept) = linear_fit(xs, ys);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let s2 = if n > 2.0 { sse / (n - 2.0) } else { f64::NAN };
    let slope_se = (s2 / sxx).sqrt();
    let intercept_se = (s2 * (1.0 / n + mx * mx / sxx)).sqrt();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Regression { slope, intercept, slope_se, intercept_se, r2 }
}

/// Welford accumulator with an associative merge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        Moments { n, mean, m2 }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.m2 / (self.n - 1) as f64
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Self-normalized importance-sampling estimate `Σ w f / Σ w`.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Weighted {
    pub n: u64,
    sw: f64,
    sw2: f64,
    swf: f64,
    sw2f: f64,
    sw2f2: f64,
}

impl Weighted {
    pub fn push(&mut self, w: f64, f: f64) {
        self.n += 1;
        self.sw += w;
        self.sw2 += w * w;
        self.swf += w * f;
        self.sw2f += w * w * f;
        self.sw2f2 += w * w * f * f;
    }

    pub fn merge(&self, o: &Weighted) -> Weighted {
        Weighted {
            n: self.n + o.n,
            sw: self.sw + o.sw,
            sw2: self.sw2 + o.sw2,
            swf: self.swf + o.swf,
            sw2f: self.sw2f + o.sw2f,
            sw2f2: self.sw2f2 + o.sw2f2,
        }
    }

    pub fn mean(&self) -> f64 {
        self.swf / self.sw
    }

    /// Delta-method standard error of the ratio estimator.
    pub fn stderr(&self) -> f64 {
        let m = self.mean();
        let num = self.sw2f2 - 2.0 * m * self.sw2f + m * m * self.sw2;
        num.max(0.0).sqrt() / self.sw
    }

    /// Kish effective sample size `(Σw)² / Σw²`.
    pub fn ess(&self) -> f64 {
        if self.sw2 == 0.0 {
            return 0.0;
        }
        self.sw * self.sw / self.sw2
    }
}

/// Two-sample chi-square homogeneity test on integer data, pooling sparse
/// cells so that every cell has expected count at least 5 in both samples.
/// Returns `(statistic, degrees of freedom, p-value)`.
pub fn two_sample_chi2(a: &[i64], b: &[i64]) -> (f64, usize, f64) {
    let mut ca = std::collections::BTreeMap::<i64, f64>::new();
    let mut cb = std::collections::BTreeMap::<i64, f64>::new();
    for &x in a {
        *ca.entry(x).or_default() += 1.0;
    }
    for &x in b {
        *cb.entry(x).or_default() += 1.0;
    }
    let keys: std::collections::BTreeSet<i64> = ca.keys().chain(cb.keys()).copied().collect();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let frac_a = na / (na + nb);
    // pool adjacent values in order until both expected counts reach 5
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut xa, mut xb) = (0.0, 0.0);
    for k in keys {
        xa += ca.get(&k).copied().unwrap_or(0.0);
        xb += cb.get(&k).copied().unwrap_or(0.0);
        let tot = xa + xb;
        if tot * frac_a.min(1.0 - frac_a) >= 5.0 {
            cells.push((xa, xb));
            xa = 0.0;
            xb = 0.0;
        }
    }
    if xa + xb > 0.0 {
        if let Some(last) = cells.last_mut() {
            last.0 += xa;
            last.1 += xb;
        } else {
            cells.push((xa, xb));
        }
    }
    if cells.len() < 2 {
        return (0.0, 0, 1.0);
    }
    let mut stat = 0.0;
    for &(x, y) in &cells {
        let tot = x + y;
        let ea = tot * frac_a;
        let eb = tot - ea;
        stat += (x - ea).powi(2) / ea + (y - eb).powi(2) / eb;
    }
    let df = cells.len() - 1;
    (stat, df, chi2_sf(stat, df as f64))
}

/// Upper tail of the chi-square distribution.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(df).map(|d| d.sf(x)).unwrap_or(f64::NAN)
}

/// Two-sample chi-square test for weighted samples against an unweighted
/// reference, using the Kish effective size of the weighted sample.
/// Cells are given as (weighted fraction, reference count) per bin.
pub fn weighted_vs_plain_chi2(wfrac: &[f64], ess: f64, counts: &[f64]) -> (f64, usize, f64) {
    let nb: f64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut df = 0usize;
    for (&p, &c) in wfrac.iter().zip(counts) {
        let q = c / nb;
        let pooled = (p * ess + c) / (ess + nb);
        if pooled * ess.min(nb) < 5.0 {
            continue;
        }
        let var = pooled * (1.0 - pooled) * (1.0 / ess + 1.0 / nb);
        stat += (p - q).powi(2) / var;
        df += 1;
    }
    let df = df.saturating_sub(1).max(1);
    (stat, df, chi2_sf(stat, df as f64))
}
