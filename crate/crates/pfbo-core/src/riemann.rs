//! Bucketized output distributions: bar-plot densities over a fixed border
//! grid, with cross-entropy, KL divergence, moments, quantiles, and
//! Expected Improvement in closed form.

use std::sync::Arc;

use crate::error::{CoreError, Result};

/// Probability floor applied inside logarithms and KL denominators.
pub const PROB_FLOOR: f64 = 1e-12;

/// Sorted bucket borders; n_buckets = borders.len() - 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RiemannSpec {
    borders: Vec<f64>,
}

impl RiemannSpec {
    pub fn from_borders(borders: Vec<f64>) -> Result<Self> {
        if borders.len() < 3 {
            return Err(CoreError::contract("RiemannSpec", "need at least 2 buckets"));
        }
        if borders.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::contract("RiemannSpec", "borders must strictly increase"));
        }
        Ok(RiemannSpec { borders })
    }

    /// Equal-mass borders from empirical quantiles of the samples; outer
    /// borders are the sample extremes. Near-duplicate quantiles are pushed
    /// apart by a minimal separation of 1e-9.
    pub fn from_samples(samples: &[f64], n_buckets: usize) -> Result<Self> {
        if n_buckets < 2 {
            return Err(CoreError::contract("build_spec", "need n_buckets >= 2"));
        }
        if samples.len() < 10 * n_buckets {
            return Err(CoreError::contract(
                "build_spec",
                format!("need at least {} samples, got {}", 10 * n_buckets, samples.len()),
            ));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::contract("build_spec", "samples must be finite"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        let mut borders = Vec::with_capacity(n_buckets + 1);
        for l in 0..=n_buckets {
            let q = l as f64 / n_buckets as f64;
            // linear-interpolation quantile over the sorted sample
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            let v = if lo + 1 < n { sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac } else { sorted[lo] };
            borders.push(v);
        }
        for i in 1..borders.len() {
            if borders[i] <= borders[i - 1] {
                borders[i] = borders[i - 1] + 1e-9;
            }
        }
        RiemannSpec::from_borders(borders)
    }

    pub fn n_buckets(&self) -> usize {
        self.borders.len() - 1
    }

    pub fn borders(&self) -> &[f64] {
        &self.borders
    }

    pub fn bucket_width(&self, l: usize) -> f64 {
        self.borders[l + 1] - self.borders[l]
    }

    pub fn bucket_midpoint(&self, l: usize) -> f64 {
        0.5 * (self.borders[l] + self.borders[l + 1])
    }

    /// Half-open buckets [b_l, b_{l+1}); out-of-range targets clamp into the
    /// edge buckets.
    pub fn bucket_of(&self, y: f64) -> usize {
        let n = self.n_buckets();
        if y < self.borders[0] {
            return 0;
        }
        if y >= self.borders[n] {
            return n - 1;
        }
        // binary search for the last border <= y
        let mut lo = 0usize;
        let mut hi = n; // invariant: borders[lo] <= y < borders[hi+? ] within range
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.borders[mid] <= y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Affine image of the borders: b -> scale * b + shift.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Self> {
        RiemannSpec::from_borders(self.borders.iter().map(|b| b * scale + shift).collect())
    }
}

/// Bucket probabilities for a batch of query points over a shared spec.
#[derive(Debug, Clone)]
pub struct RiemannPosterior {
    spec: Arc<RiemannSpec>,
    probs: Vec<f64>, // row-major [n_queries, n_buckets]
}

impl RiemannPosterior {
    pub fn new(spec: Arc<RiemannSpec>, probs: Vec<f64>) -> Result<Self> {
        let nb = spec.n_buckets();
        if probs.is_empty() || probs.len() % nb != 0 {
            return Err(CoreError::contract("RiemannPosterior", "probs must be k rows of n_buckets"));
        }
        for row in probs.chunks(nb) {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(CoreError::contract(
                    "RiemannPosterior",
                    format!("rows must be simplex vectors (sum {})", sum),
                ));
            }
        }
        Ok(RiemannPosterior { spec, probs })
    }

    pub fn spec(&self) -> &RiemannSpec {
        &self.spec
    }

    pub fn spec_arc(&self) -> Arc<RiemannSpec> {
        Arc::clone(&self.spec)
    }

    pub fn n_queries(&self) -> usize {
        self.probs.len() / self.spec.n_buckets()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let nb = self.spec.n_buckets();
        &self.probs[j * nb..(j + 1) * nb]
    }

    /// Mean over queries of -log(probability of the true bucket), floored.
    pub fn ce_loss(&self, y_true: &[f64]) -> Result<f64> {
        if y_true.len() != self.n_queries() {
            return Err(CoreError::contract("ce_loss", "one target per query point"));
        }
        let total: f64 = y_true
            .iter()
            .enumerate()
            .map(|(j, &y)| {
                let l = self.spec.bucket_of(y);
                -(self.row(j)[l].max(PROB_FLOOR)).ln()
            })
            .sum();
        Ok(total / y_true.len() as f64)
    }

    /// P(Y <= t) under the piecewise-uniform density.
    pub fn cdf(&self, j: usize, t: f64) -> f64 {
        let row = self.row(j);
        let b = self.spec.borders();
        if t <= b[0] {
            return 0.0;
        }
        let mut acc = 0.0;
        for (l, &p) in row.iter().enumerate() {
            if t >= b[l + 1] {
                acc += p;
            } else {
                acc += p * (t - b[l]) / (b[l + 1] - b[l]);
                break;
            }
        }
        acc.min(1.0)
    }

    /// Smallest t with P(Y <= t) >= q.
    pub fn quantile(&self, j: usize, q: f64) -> f64 {
        let row = self.row(j);
        let b = self.spec.borders();
        let q = q.clamp(0.0, 1.0);
        let mut acc = 0.0;
        for (l, &p) in row.iter().enumerate() {
            if acc + p >= q {
                if p <= 0.0 {
                    return b[l];
                }
                return b[l] + (q - acc) / p * (b[l + 1] - b[l]);
            }
            acc += p;
        }
        b[b.len() - 1]
    }

    /// E[max(0, f_best - Y)] with Y uniform within each bucket.
    pub fn expected_improvement(&self, j: usize, f_best: f64) -> f64 {
        let row = self.row(j);
        let b = self.spec.borders();
        let mut ei = 0.0;
        for (l, &p) in row.iter().enumerate() {
            let (lo, hi) = (b[l], b[l + 1]);
            if f_best >= hi {
                ei += p * (f_best - 0.5 * (lo + hi));
            } else if f_best > lo {
                ei += p * (f_best - lo) * (f_best - lo) / (2.0 * (hi - lo));
            }
        }
        ei
    }

    /// Mean and variance of the piecewise-uniform mixture.
    pub fn mean_and_variance(&self, j: usize) -> (f64, f64) {
        let row = self.row(j);
        let mut mean = 0.0;
        let mut second = 0.0;
        for (l, &p) in row.iter().enumerate() {
            let mid = self.spec.bucket_midpoint(l);
            let w = self.spec.bucket_width(l);
            mean += p * mid;
            second += p * (mid * mid + w * w / 12.0);
        }
        (mean, (second - mean * mean).max(0.0))
    }
}

fn specs_match(a: &RiemannSpec, b: &RiemannSpec) -> bool {
    std::ptr::eq(a, b) || a.borders == b.borders
}

/// KL(p || q) between two posterior rows over the same spec, with 0 log 0 = 0
/// and q floored at 1e-12.
pub fn kl(
    p: (&RiemannSpec, &[f64]),
    q: (&RiemannSpec, &[f64]),
) -> Result<f64> {
    if !specs_match(p.0, q.0) {
        return Err(CoreError::contract("kl", "posterior rows use different bucket specs"));
    }
    if p.1.len() != q.1.len() {
        return Err(CoreError::contract("kl", "rows differ in length"));
    }
    Ok(kl_rows(p.1, q.1))
}

/// Re-express a posterior row on a different border grid. Mass moves by
/// exact interval overlap under the within-bucket uniform density; mass
/// outside the target range clamps into its edge buckets.
pub fn rebin(row: &[f64], from: &RiemannSpec, to: &RiemannSpec) -> Vec<f64> {
    let nb_to = to.n_buckets();
    let mut out = vec![0.0f64; nb_to];
    for (l, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let (lo, hi) = (from.borders()[l], from.borders()[l + 1]);
        let w = hi - lo;
        // clamped tails
        let t0 = to.borders()[0];
        let tn = to.borders()[nb_to];
        let below = ((t0 - lo).max(0.0) / w).min(1.0);
        let above = ((hi - tn).max(0.0) / w).min(1.0);
        out[0] += p * below;
        out[nb_to - 1] += p * above;
        for k in 0..nb_to {
            let (a, b) = (to.borders()[k].max(lo), to.borders()[k + 1].min(hi));
            if b > a {
                out[k] += p * (b - a) / w;
            }
        }
    }
    // renormalize away accumulated float dust
    let sum: f64 = out.iter().sum();
    if sum > 0.0 {
        for v in out.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// KL between two probability rows of equal length (spec already checked).
pub fn kl_rows(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q.iter())
        .map(|(&pi, &qi)| if pi <= 0.0 { 0.0 } else { pi * (pi / qi.max(PROB_FLOOR)).ln() })
        .sum()
}
