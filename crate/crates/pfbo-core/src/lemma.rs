//! Numerical check that the KL divergence between exact GP posteriors at
//! nearby inputs is bounded linearly in their distance.

use rand::Rng;
use rayon::prelude::*;

use pfbo_tensor::Tensor;

use crate::error::{CoreError, Result};
use crate::gp::{matern52_radial, sample_prior, GpFactorization, GpHyperparams};
use crate::rng::{derive_seed, rng_from};

/// Posterior variances below this floor disqualify a trial (the bound needs a
/// variance floor).
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LemmaConfig {
    pub theta: GpHyperparams,
    pub d: usize,
    /// Observation count per sampled dataset.
    pub n_obs: usize,
    /// Pair distances to probe.
    pub eta_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl LemmaConfig {
    /// Logarithmic grid over [1e-4, 1e-1], 200 trials per distance.
    pub fn default_with(theta: GpHyperparams, d: usize, n_obs: usize, seed: u64) -> Self {
        let eta_grid = (0..9)
            .map(|i| 10f64.powf(-4.0 + 3.0 * i as f64 / 8.0))
            .collect();
        LemmaConfig { theta, d, n_obs, eta_grid, trials: 200, seed }
    }

    pub fn validate(&self) -> Result<()> {
        self.theta.validate()?;
        if self.n_obs == 0 || self.trials == 0 || self.d == 0 {
            return Err(CoreError::param("n_obs, trials, and d must be positive"));
        }
        let diameter = (self.d as f64).sqrt();
        if self.eta_grid.iter().any(|&e| !(e > 0.0 && e <= diameter)) {
            return Err(CoreError::param("every eta must be positive and at most the domain diameter"));
        }
        Ok(())
    }
}

/// KL divergence between two univariate Gaussians:
/// log(s2/s1) + (v1 + (m1-m2)^2) / (2 v2) - 1/2.
pub fn gaussian_kl(m1: f64, v1: f64, m2: f64, v2: f64) -> Result<f64> {
    if !(v1 > 0.0 && v2 > 0.0) {
        return Err(CoreError::contract("gaussian_kl", "variances must be positive"));
    }
    Ok((v2 / v1).ln() * 0.5 + (v1 + (m1 - m2) * (m1 - m2)) / (2.0 * v2) - 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaStats {
    pub eta: f64,
    pub mean_kl: f64,
    pub max_kl: f64,
    pub trials: usize,
    pub discarded: usize,
}

#[derive(Debug, Clone)]
pub struct LemmaReport {
    pub per_eta: Vec<EtaStats>,
    /// Least-squares slope of max KL vs eta through the origin.
    pub fitted_slope: f64,
    /// Minimum posterior variance seen across all trials.
    pub variance_floor_seen: f64,
    pub config: LemmaConfig,
}

impl LemmaReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eta,mean_kl,max_kl,trials\n");
        for e in &self.per_eta {
            s.push_str(&format!("{},{},{},{}\n", e.eta, e.mean_kl, e.max_kl, e.trials));
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "fitted C~ = {:.6} over {} distances x {} trials (min posterior variance {:.3e})",
            self.fitted_slope,
            self.per_eta.len(),
            self.config.trials,
            self.variance_floor_seen
        )
    }
}

struct Trial {
    kl: f64,
    min_var: f64,
}

fn one_trial(cfg: &LemmaConfig, eta: f64, seed: u64) -> Result<Option<Trial>> {
    let mut rng = rng_from(seed);
    // observations and one pair of nearby queries, all inside the unit cube
    let x_obs = Tensor::from_fn(&[cfg.n_obs, cfg.d], |_| rng.random::<f64>());
    let y_obs = sample_prior(&x_obs, &cfg.theta, derive_seed(seed, &[0x0B5]))?;

    let (x, x_tilde) = loop {
        let x: Vec<f64> = (0..cfg.d).map(|_| rng.random::<f64>()).collect();
        // random direction of length eta
        let dir: Vec<f64> = (0..cfg.d)
            .map(|_| {
                let v: f64 =
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                v
            })
            .collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let x_tilde: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, b)| a + eta * b / norm).collect();
        if x_tilde.iter().all(|&v| (0.0..=1.0).contains(&v)) {
            break (x, x_tilde);
        }
    };

    let fact = GpFactorization::new(&x_obs, &y_obs, &cfg.theta)?;
    let p = fact.predict_one(&x)?;
    let q = fact.predict_one(&x_tilde)?;
    let min_var = p.variance.min(q.variance);
    if min_var < VARIANCE_FLOOR {
        return Ok(None);
    }
    Ok(Some(Trial { kl: gaussian_kl(p.mean, p.variance, q.mean, q.variance)?, min_var }))
}

/// Sample posterior pairs at each grid distance and report KL statistics with
/// the fitted linear constant. Deterministic per seed.
pub fn verify_lemma(cfg: &LemmaConfig) -> Result<LemmaReport> {
    cfg.validate()?;
    let mut per_eta = Vec::with_capacity(cfg.eta_grid.len());
    let mut floor_seen = f64::INFINITY;
    for (ei, &eta) in cfg.eta_grid.iter().enumerate() {
        let trials: Vec<Option<Trial>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| one_trial(cfg, eta, derive_seed(cfg.seed, &[ei as u64, t as u64])))
            .collect::<Result<_>>()?;
        let kept: Vec<&Trial> = trials.iter().flatten().collect();
        if kept.is_empty() {
            return Err(CoreError::contract(
                "verify_lemma",
                "every trial fell below the variance floor; shrink the domain or noise",
            ));
        }
        let discarded = cfg.trials - kept.len();
        let mean_kl = kept.iter().map(|t| t.kl).sum::<f64>() / kept.len() as f64;
        let max_kl = kept.iter().map(|t| t.kl).fold(0.0, f64::max);
        floor_seen = floor_seen.min(kept.iter().map(|t| t.min_var).fold(f64::INFINITY, f64::min));
        per_eta.push(EtaStats { eta, mean_kl, max_kl, trials: kept.len(), discarded });
    }
    // least squares through the origin on (eta, max_kl)
    let sxy: f64 = per_eta.iter().map(|e| e.eta * e.max_kl).sum();
    let sxx: f64 = per_eta.iter().map(|e| e.eta * e.eta).sum();
    Ok(LemmaReport {
        per_eta,
        fitted_slope: sxy / sxx,
        variance_floor_seen: floor_seen,
        config: cfg.clone(),
    })
}

/// The proof's explicit constant 2 c^2 N^{3/2} B / (noise * b * rho), with the
/// kernel bounds B and b estimated numerically over the unit cube.
pub fn theoretical_constant(cfg: &LemmaConfig, rho: f64) -> f64 {
    let diameter = (cfg.d as f64).sqrt();
    let b_lower = matern52_radial(diameter, &cfg.theta);
    // max over r of |k'(r)|: probe densely over [0, diameter]
    let mut b_grad: f64 = 0.0;
    let h = 1e-6;
    for i in 0..=2000 {
        let r = diameter * i as f64 / 2000.0;
        let g = (matern52_radial(r + h, &cfg.theta) - matern52_radial((r - h).max(0.0), &cfg.theta))
            / (2.0 * h);
        b_grad = b_grad.max(g.abs());
    }
    let c = cfg.theta.outputscale;
    let n = cfg.n_obs as f64;
    2.0 * c * c * n.powf(1.5) * b_grad / (cfg.theta.noise * b_lower * rho)
}
