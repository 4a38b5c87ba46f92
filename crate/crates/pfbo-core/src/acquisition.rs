//! Acquisition maximization over the unit cube: candidate-set scoring for the
//! transformer surrogate (one batched forward pass) and multi-start local
//! ascent for the GP surrogate.

use rand::Rng;

use pfbo_tensor::Tensor;

use crate::error::{CoreError, Result};
use crate::gp_surrogate::{gaussian_ei, GpModel};
use crate::pt::PtModel;
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq)]
pub struct AcqOptConfig {
    /// Candidate count for the transformer surrogate.
    pub local_test_points: usize,
    /// Gaussian perturbation std around the incumbent, in input units.
    pub initial_perturbation: f64,
    /// Multiplicative decay of the perturbation per BO step.
    pub perturbation_decay: f64,
    /// Local-ascent starts for the GP surrogate.
    pub gp_restarts: usize,
    /// Uniform pre-screen samples for the GP surrogate.
    pub gp_raw_samples: usize,
    /// Fraction of candidates drawn by local perturbation (rest uniform).
    pub local_mix: f64,
}

impl AcqOptConfig {
    /// Defaults per input dimension.
    pub fn default_for_dim(d: usize) -> Self {
        let (initial_perturbation, perturbation_decay) = match d {
            0..=1 => (0.25, 0.995),
            2 => (0.25, 0.995),
            3..=6 => (0.25, 0.999),
            _ => (0.5, 0.998),
        };
        AcqOptConfig {
            local_test_points: 1000,
            initial_perturbation,
            perturbation_decay,
            gp_restarts: 10,
            gp_raw_samples: 500,
            local_mix: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.local_test_points == 0 || self.gp_restarts == 0 || self.gp_raw_samples == 0 {
            return Err(CoreError::param("acquisition counts must be positive"));
        }
        if !(self.perturbation_decay > 0.0 && self.perturbation_decay <= 1.0) {
            return Err(CoreError::param("perturbation decay must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.local_mix) {
            return Err(CoreError::param("candidate mix must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Candidate set: a local fraction perturbed around the incumbent best input
/// (std decayed by step), the rest uniform; all clipped into the cube.
pub fn pt_candidates(
    d: usize,
    incumbent: &[f64],
    cfg: &AcqOptConfig,
    step_index: usize,
    seed: u64,
) -> Tensor<f64> {
    let mut rng = rng_from(derive_seed(seed, &[0xCA4D, step_index as u64]));
    let std = cfg.initial_perturbation * cfg.perturbation_decay.powi(step_index as i32);
    let n_local = ((cfg.local_test_points as f64) * cfg.local_mix).round() as usize;
    let n = cfg.local_test_points;
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            let v = if i < n_local {
                let z: f64 = rand_distr::Distribution::sample(
                    &rand_distr::StandardNormal,
                    &mut rng,
                );
                (incumbent[j] + std * z).clamp(0.0, 1.0)
            } else {
                rng.random::<f64>()
            };
            data.push(v);
        }
    }
    Tensor::new(vec![n, d], data).expect("candidate tensor")
}

/// One batched forward pass scores bucket-EI for every candidate; the argmax
/// wins, ties broken by the first index.
pub fn maximize_pt(
    model: &PtModel,
    obs_x: &Tensor<f64>,
    obs_y: &[f64],
    f_best: f64,
    cfg: &AcqOptConfig,
    step_index: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n_obs = obs_x.shape()[0];
    if n_obs == 0 {
        return Err(CoreError::contract(
            "maximize_pt",
            "no observations; the BO engine must use its initial design instead",
        ));
    }
    let d = model.cfg().d;
    let incumbent = {
        let best = obs_y
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        obs_x.row(best).to_vec()
    };
    let cands = pt_candidates(d, &incumbent, cfg, step_index, seed);
    let post = model.posterior(obs_x, obs_y, &cands)?;
    let mut best_i = 0usize;
    let mut best_ei = f64::NEG_INFINITY;
    for j in 0..post.n_queries() {
        let ei = post.expected_improvement(j, f_best);
        if ei > best_ei {
            best_ei = ei;
            best_i = j;
        }
    }
    Ok(cands.row(best_i).to_vec())
}

fn project(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// EI hill climb from a start point: numerical gradient (central differences)
/// with backtracking steps, box-projected, at most 100 iterations. Accepted
/// steps never decrease EI.
fn ascend_ei(model: &GpModel, f_best: f64, start: &[f64], seed_step: f64) -> Result<(Vec<f64>, f64)> {
    let d = start.len();
    let ei_at = |x: &[f64]| -> Result<f64> {
        let p = model.predict_one(x)?;
        Ok(gaussian_ei(p.mean, p.variance, f_best))
    };
    let mut x = start.to_vec();
    let mut best = ei_at(&x)?;
    let h = 1e-6;
    let mut step = seed_step;
    for _ in 0..100 {
        let mut grad = vec![0.0f64; d];
        for j in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] = (xp[j] + h).min(1.0);
            xm[j] = (xm[j] - h).max(0.0);
            let denom = xp[j] - xm[j];
            if denom <= 0.0 {
                continue;
            }
            grad[j] = (ei_at(&xp)? - ei_at(&xm)?) / denom;
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < 1e-12 {
            break;
        }
        let mut advanced = false;
        let mut s = step;
        for _ in 0..15 {
            let mut cand = x.clone();
            for j in 0..d {
                cand[j] += s * grad[j] / gnorm;
            }
            project(&mut cand);
            let v = ei_at(&cand)?;
            if v > best {
                x = cand;
                best = v;
                step = (s * 2.0).min(0.25);
                advanced = true;
                break;
            }
            s *= 0.5;
        }
        if !advanced {
            break;
        }
    }
    Ok((x, best))
}

/// Score EI on uniform raw samples, then refine the top starts by local
/// ascent; returns the best local optimum. Deterministic per seed.
pub fn maximize_gp(
    model: &GpModel,
    d: usize,
    f_best: f64,
    cfg: &AcqOptConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut rng = rng_from(derive_seed(seed, &[0x6B61]));
    let mut scored: Vec<(Vec<f64>, f64)> = Vec::with_capacity(cfg.gp_raw_samples);
    for _ in 0..cfg.gp_raw_samples {
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let p = model.predict_one(&x)?;
        scored.push((x, gaussian_ei(p.mean, p.variance, f_best)));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut best_x = scored[0].0.clone();
    let mut best_ei = scored[0].1;
    for (start, _) in scored.into_iter().take(cfg.gp_restarts) {
        let (x, ei) = ascend_ei(model, f_best, &start, 0.05)?;
        if ei > best_ei {
            best_ei = ei;
            best_x = x;
        }
    }
    Ok(best_x)
}
