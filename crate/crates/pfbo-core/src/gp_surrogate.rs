//! Exact-GP baseline surrogate: kernel hyperparameters fitted by multi-start
//! gradient ascent on the log marginal likelihood, targets z-scored before
//! fitting and predictions mapped back.

use rand::Rng;

use pfbo_tensor::Tensor;

use crate::error::{CoreError, Result};
use crate::gp::{lml_with_grad, GpFactorization, GpHyperparams, GpPosterior};
use crate::pt::model::zscore_stats;
use crate::rng::{derive_seed, rng_from};
use crate::stats::{normal_cdf, normal_pdf};

/// Box bounds for the fit, in raw (not log) units.
pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-3, 10.0);
pub const OUTPUTSCALE_BOUNDS: (f64, f64) = (1e-3, 100.0);
pub const NOISE_BOUNDS: (f64, f64) = (1e-6, 1.0);

/// Plausible subranges the random restarts draw from (log-uniform).
const RESTART_LENGTHSCALE: (f64, f64) = (0.01, 3.0);
const RESTART_OUTPUTSCALE: (f64, f64) = (0.1, 10.0);
const RESTART_NOISE: (f64, f64) = (1e-5, 0.5);

const MAX_ASCENT_ITERS: usize = 100;

/// Fitted model: hyperparameters, the z-scored data, and a cached
/// factorization. Immutable after fitting.
#[derive(Debug, Clone)]
pub struct GpModel {
    theta: GpHyperparams,
    fact: GpFactorization,
    y_mean: f64,
    y_std: f64,
    pub restarts_used: usize,
    pub log_evidence: f64,
    /// Gradient source used by the fit; the ascent runs on closed-form
    /// marginal-likelihood gradients rather than a Cholesky backward pass.
    pub grad_mode: &'static str,
}

impl GpModel {
    pub fn theta(&self) -> &GpHyperparams {
        &self.theta
    }

    /// Posterior in raw target units at each query row.
    pub fn predict(&self, x_query: &Tensor<f64>) -> Result<Vec<GpPosterior>> {
        let posts = self.fact.predict(x_query)?;
        Ok(posts
            .into_iter()
            .map(|p| GpPosterior {
                mean: p.mean * self.y_std + self.y_mean,
                variance: p.variance * self.y_std * self.y_std,
            })
            .collect())
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<GpPosterior> {
        let p = self.fact.predict_one(x)?;
        Ok(GpPosterior {
            mean: p.mean * self.y_std + self.y_mean,
            variance: p.variance * self.y_std * self.y_std,
        })
    }
}

fn clamp_log(u: [f64; 3]) -> [f64; 3] {
    [
        u[0].clamp(LENGTHSCALE_BOUNDS.0.ln(), LENGTHSCALE_BOUNDS.1.ln()),
        u[1].clamp(OUTPUTSCALE_BOUNDS.0.ln(), OUTPUTSCALE_BOUNDS.1.ln()),
        u[2].clamp(NOISE_BOUNDS.0.ln(), NOISE_BOUNDS.1.ln()),
    ]
}

fn theta_of(u: [f64; 3]) -> GpHyperparams {
    GpHyperparams { lengthscale: u[0].exp(), outputscale: u[1].exp(), noise: u[2].exp() }
}

/// Projected gradient ascent with backtracking on lml(theta(u)), u = log theta.
/// Returns (u, lml); the score never decreases below the start.
fn ascend(x: &Tensor<f64>, y: &[f64], start: [f64; 3]) -> Result<([f64; 3], f64)> {
    let eval = |u: [f64; 3]| -> Result<(f64, [f64; 3])> {
        let th = theta_of(u);
        let (lml, g) = lml_with_grad(x, y, &th)?;
        // chain rule through u = ln theta
        Ok((lml, [g[0] * th.lengthscale, g[1] * th.outputscale, g[2] * th.noise]))
    };
    let mut u = clamp_log(start);
    let (mut best, mut grad) = eval(u)?;
    let mut step = 0.1;
    for _ in 0..MAX_ASCENT_ITERS {
        let gnorm = (grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2]).sqrt();
        if gnorm < 1e-9 {
            break;
        }
        let mut advanced = false;
        // backtracking line search along the gradient
        let mut s = step;
        for _ in 0..20 {
            let cand = clamp_log([
                u[0] + s * grad[0] / gnorm,
                u[1] + s * grad[1] / gnorm,
                u[2] + s * grad[2] / gnorm,
            ]);
            if cand == u {
                break;
            }
            match eval(cand) {
                Ok((lml, g)) if lml > best => {
                    u = cand;
                    best = lml;
                    grad = g;
                    step = (s * 2.0).min(1.0);
                    advanced = true;
                    break;
                }
                _ => s *= 0.5,
            }
        }
        if !advanced {
            if s < 1e-10 {
                break;
            }
            step = s;
        }
    }
    Ok((u, best))
}

/// Maximize the log marginal likelihood over (lengthscale, outputscale,
/// noise) in log space. The warm start, when given, is one of the restarts;
/// ties break toward smaller lengthscale. Targets are z-scored internally.
pub fn fit(
    x_obs: &Tensor<f64>,
    y_obs: &[f64],
    restarts: usize,
    seed: u64,
    warm_start: Option<GpHyperparams>,
) -> Result<GpModel> {
    let n = x_obs.shape()[0];
    if n == 0 || y_obs.len() != n {
        return Err(CoreError::contract("fit", "need at least one observation"));
    }
    let restarts = restarts.max(1);
    let (y_mean, y_std) = zscore_stats(y_obs);
    let y_z: Vec<f64> = y_obs.iter().map(|v| (v - y_mean) / y_std).collect();

    let mut starts: Vec<[f64; 3]> = Vec::with_capacity(restarts);
    if let Some(w) = warm_start {
        starts.push(clamp_log([w.lengthscale.ln(), w.outputscale.ln(), w.noise.max(1e-12).ln()]));
    }
    let mut rng = rng_from(derive_seed(seed, &[0x617F]));
    let mut draw = |(lo, hi): (f64, f64)| -> f64 {
        let u: f64 = rng.random();
        lo.ln() + u * (hi.ln() - lo.ln())
    };
    while starts.len() < restarts {
        starts.push([
            draw(RESTART_LENGTHSCALE),
            draw(RESTART_OUTPUTSCALE),
            draw(RESTART_NOISE),
        ]);
    }

    let mut best: Option<([f64; 3], f64)> = None;
    let mut used = 0usize;
    for start in starts {
        match ascend(x_obs, &y_z, start) {
            Ok((u, lml)) => {
                used += 1;
                let better = match &best {
                    None => true,
                    Some((bu, bl)) => {
                        lml > bl + 1e-12 || ((lml - bl).abs() <= 1e-12 && u[0] < bu[0])
                    }
                };
                if better {
                    best = Some((u, lml));
                }
            }
            Err(_) => continue,
        }
    }
    let (u, log_evidence) =
        best.ok_or_else(|| CoreError::Fit("every restart failed factorization".into()))?;
    let theta = theta_of(u);
    let fact = GpFactorization::new(x_obs, &y_z, &theta)?;
    Ok(GpModel {
        theta,
        fact,
        y_mean,
        y_std,
        restarts_used: used,
        log_evidence,
        grad_mode: "analytic-lml",
    })
}

/// Expected improvement of a Gaussian posterior under minimisation:
/// sigma * (z Phi(z) + phi(z)) with z = (f_best - mu) / sigma.
pub fn gaussian_ei(mean: f64, variance: f64, f_best: f64) -> f64 {
    debug_assert!(variance >= 0.0);
    let sigma = variance.max(0.0).sqrt();
    if sigma == 0.0 {
        return (f_best - mean).max(0.0);
    }
    let z = (f_best - mean) / sigma;
    (sigma * (z * normal_cdf(z) + normal_pdf(z))).max(0.0)
}
