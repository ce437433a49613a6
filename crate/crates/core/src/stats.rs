//! Monte Carlo summaries.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{keyed_rng, Domain};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Monte Carlo estimate with its standard error and a normal 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
    pub n_eff: f64,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

impl MCEstimate {
    pub fn new(mean: f64, se: f64, n: u64, n_eff: f64) -> Self {
        let se = se.max(0.0);
        Self {
            mean,
            se,
            n,
            n_eff,
            level: 0.95,
            lower: mean - Z95 * se,
            upper: mean + Z95 * se,
        }
    }

    /// An exactly known value.
    pub fn exact(value: f64, n: u64) -> Self {
        Self::new(value, 0.0, n, n as f64)
    }

    pub fn from_values(values: &[f64]) -> Self {
        let mut acc = Moments::default();
        values.iter().for_each(|v| acc.push(*v));
        acc.estimate()
    }

    /// `|self − reference| / SE`, infinite if SE vanishes and the values differ.
    pub fn z_score(&self, reference: f64) -> f64 {
        let d = (self.mean - reference).abs();
        if d == 0.0 {
            0.0
        } else if self.se > 0.0 {
            d / self.se
        } else {
            f64::INFINITY
        }
    }

    /// Whether `reference` lies within `k` standard errors.
    pub fn within(&self, reference: f64, k: f64) -> bool {
        self.z_score(reference) <= k
    }

    /// `self − other` for independent estimates.
    pub fn difference(&self, other: &MCEstimate) -> MCEstimate {
        MCEstimate::new(
            self.mean - other.mean,
            self.se.hypot(other.se),
            self.n.min(other.n),
            self.n_eff.min(other.n_eff),
        )
    }

    /// Ratio of independent estimates by the delta method.
    pub fn ratio(&self, other: &MCEstimate) -> MCEstimate {
        let r = self.mean / other.mean;
        let rel = (self.se / self.mean).hypot(other.se / other.mean);
        MCEstimate::new(r, (r * rel).abs(), self.n.min(other.n), self.n_eff.min(other.n_eff))
    }

    pub fn scaled(&self, c: f64) -> MCEstimate {
        MCEstimate::new(self.mean * c, self.se * c.abs(), self.n, self.n_eff)
    }
}

/// Streaming mean/variance (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        self.mean += d * w;
        self.m2 += other.m2 + d * d * self.n as f64 * w;
        self.n = n;
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> MCEstimate {
        let se = if self.n > 0 {
            (self.variance() / self.n as f64).sqrt()
        } else {
            f64::NAN
        };
        MCEstimate::new(self.mean, se, self.n, self.n as f64)
    }
}

/// Kish effective sample size `(Σw)² / Σw²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Unbiased importance-sampling estimate `(1/n) Σ w_i g_i` with `n_eff` attached.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> MCEstimate {
    let mut acc = Moments::default();
    for (v, w) in values.iter().zip(weights) {
        acc.push(if *w == 0.0 { 0.0 } else { v * w });
    }
    let mut e = acc.estimate();
    e.n_eff = effective_sample_size(weights);
    e
}

/// Weighted `p`-quantile (lower inverse of the weighted empirical CDF).
pub fn weighted_quantile(values: &[f64], weights: &[f64], p: f64) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| weights[i] > 0.0).collect();
    if idx.is_empty() {
        return f64::NAN;
    }
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = idx.iter().map(|&i| weights[i]).sum();
    let target = p.clamp(0.0, 1.0) * total;
    let mut run = 0.0;
    for &i in &idx {
        run += weights[i];
        if run >= target {
            return values[i];
        }
    }
    values[*idx.last().expect("non-empty")]
}

/// Kolmogorov–Smirnov distance between a weighted sample and an unweighted one.
pub fn ks_weighted_vs_sample(values: &[f64], weights: &[f64], reference: &[f64]) -> f64 {
    let mut a: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, w)| (*v, *w))
        .collect();
    a.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = a.iter().map(|p| p.1).sum();
    let mut b = reference.to_vec();
    b.sort_by(f64::total_cmp);
    let nb = b.len() as f64;
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb, mut worst) = (0.0f64, 0.0f64, 0.0f64);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.0.min(*y),
            (Some(x), None) => x.0,
            (None, Some(y)) => *y,
            (None, None) => break,
        };
        while i < a.len() && a[i].0 <= next {
            fa += a[i].1 / total;
            i += 1;
        }
        while j < b.len() && b[j] <= next {
            fb += 1.0 / nb;
            j += 1;
        }
        worst = worst.max((fa - fb).abs());
    }
    worst
}

/// Kolmogorov–Smirnov distance between a weighted sample and a CDF.
pub fn ks_weighted_vs_cdf<F: Fn(f64) -> f64>(values: &[f64], weights: &[f64], cdf: F) -> f64 {
    let mut a: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, w)| (*v, *w))
        .collect();
    a.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = a.iter().map(|p| p.1).sum();
    let mut run = 0.0;
    let mut worst = 0.0f64;
    for (v, w) in a {
        let f = cdf(v);
        worst = worst.max((run - f).abs());
        run += w / total;
        worst = worst.max((run - f).abs());
    }
    worst
}

/// Least-squares fit `y ≈ a + b x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Slope of `ln p` against `ln t` where `counts[j]` of `n` paths survive past
/// `times[j]`; the standard error comes from the resampled `bootstrap` counts.
pub fn survival_slope(times: &[f64], counts: &[u64], n: u64, bootstrap: &[Vec<u64>]) -> MCEstimate {
    let lx: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let fit = |c: &[u64]| {
        let ly: Vec<f64> = c.iter().map(|k| (*k as f64 / n as f64).ln()).collect();
        linear_fit(&lx, &ly).1
    };
    let slope = fit(counts);
    let mut acc = Moments::default();
    bootstrap.iter().for_each(|c| acc.push(fit(c)));
    MCEstimate::new(slope, acc.variance().sqrt(), n, n as f64)
}

/// Survivor counts at each time for `reps` bootstrap resamples of the paths,
/// given each path's exit time; deterministic in `seed`.
pub fn bootstrap_survival_counts(exit_times: &[f64], times: &[f64], reps: usize, seed: u64) -> Vec<Vec<u64>> {
    let n = exit_times.len();
    (0..reps)
        .map(|r| {
            let mut rng = keyed_rng(seed, Domain::Bootstrap, 0, r as u64);
            let mut counts = vec![0u64; times.len()];
            for _ in 0..n {
                let e = exit_times[rng.random_range(0..n)];
                for (c, t) in counts.iter_mut().zip(times) {
                    if e > *t {
                        *c += 1;
                    }
                }
            }
            counts
        })
        .collect()
}
