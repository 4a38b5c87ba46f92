//! Matérn-5/2 kernel math and exact Gaussian-process posterior formulas.
//!
//! Zero prior mean, isotropic lengthscale, Euclidean distances on the unit
//! cube. Shared by the dataset prior, the GP baseline surrogate, and the
//! posterior-proximity experiments.

use rand_distr::{Distribution, StandardNormal};

use pfbo_tensor::linalg::{self, JitterPolicy};
use pfbo_tensor::Tensor;

use crate::error::{CoreError, Result};
use crate::rng::rng_from;

/// Kernel hyperparameters: lengthscale, outputscale (the kernel's value at
/// zero distance), and observation noise variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyperparams {
    pub lengthscale: f64,
    pub outputscale: f64,
    pub noise: f64,
}

impl GpHyperparams {
    pub fn new(lengthscale: f64, outputscale: f64, noise: f64) -> Result<Self> {
        let hp = GpHyperparams { lengthscale, outputscale, noise };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0) {
            return Err(CoreError::param(format!("lengthscale must be > 0, got {}", self.lengthscale)));
        }
        if !(self.outputscale > 0.0) {
            return Err(CoreError::param(format!("outputscale must be > 0, got {}", self.outputscale)));
        }
        if !(self.noise >= 0.0) {
            return Err(CoreError::param(format!("noise must be >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

/// Gaussian posterior at a single query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpPosterior {
    pub mean: f64,
    pub variance: f64,
}

#[inline]
fn sq_dist(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Matérn-5/2 kernel as a function of the Euclidean distance r.
pub fn matern52_radial(r: f64, hp: &GpHyperparams) -> f64 {
    let a = 5.0f64.sqrt() * r / hp.lengthscale;
    hp.outputscale * (1.0 + a + 5.0 * r * r / (3.0 * hp.lengthscale * hp.lengthscale)) * (-a).exp()
}

pub fn matern52(x: &[f64], z: &[f64], hp: &GpHyperparams) -> Result<f64> {
    hp.validate()?;
    if x.len() != z.len() {
        return Err(CoreError::contract(
            "matern52",
            format!("points live in different dimensions: {} vs {}", x.len(), z.len()),
        ));
    }
    Ok(matern52_radial(sq_dist(x, z).sqrt(), hp))
}

/// d k(r) / d lengthscale at fixed r: with s = sqrt(5) r / l this is
/// c e^{-s} s^2 (1 + s) / (3 l).
pub fn matern52_dlengthscale(r: f64, hp: &GpHyperparams) -> f64 {
    let l = hp.lengthscale;
    let s = 5.0f64.sqrt() * r / l;
    hp.outputscale * (-s).exp() * s * s * (1.0 + s) / (3.0 * l)
}

/// Noiseless kernel Gram matrix for rows of `x` ([n, d]).
pub fn gram(x: &Tensor<f64>, hp: &GpHyperparams) -> Tensor<f64> {
    let n = x.shape()[0];
    let mut k = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..=i {
            let v = matern52_radial(sq_dist(x.row(i), x.row(j)).sqrt(), hp);
            k.data_mut()[i * n + j] = v;
            k.data_mut()[j * n + i] = v;
        }
    }
    k
}

fn gram_with_noise(x: &Tensor<f64>, hp: &GpHyperparams) -> Tensor<f64> {
    let n = x.shape()[0];
    let mut k = gram(x, hp);
    for i in 0..n {
        k.data_mut()[i * n + i] += hp.noise;
    }
    k
}

/// Cached Cholesky factorization of K(X) + noise I together with the dual
/// weights; immutable after construction, cheap to query.
#[derive(Debug, Clone)]
pub struct GpFactorization {
    x_obs: Tensor<f64>,
    l: Tensor<f64>,
    alpha: Vec<f64>,
    hp: GpHyperparams,
    jitter: f64,
}

impl GpFactorization {
    pub fn new(x_obs: &Tensor<f64>, y_obs: &[f64], hp: &GpHyperparams) -> Result<Self> {
        hp.validate()?;
        let n = x_obs.shape()[0];
        if y_obs.len() != n {
            return Err(CoreError::contract(
                "GpFactorization::new",
                format!("{} inputs vs {} targets", n, y_obs.len()),
            ));
        }
        let k = gram_with_noise(x_obs, hp);
        let (l, jitter) = linalg::cholesky(&k, JitterPolicy::default())?;
        let alpha = linalg::cholesky_solve(&l, y_obs)?;
        Ok(GpFactorization { x_obs: x_obs.clone(), l, alpha, hp: *hp, jitter })
    }

    pub fn n_obs(&self) -> usize {
        self.x_obs.shape()[0]
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hp
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Exact posterior mean and (noise-free latent) variance at one query.
    pub fn predict_one(&self, x: &[f64]) -> Result<GpPosterior> {
        let n = self.n_obs();
        let mut kvec = vec![0.0f64; n];
        for i in 0..n {
            kvec[i] = matern52_radial(sq_dist(self.x_obs.row(i), x).sqrt(), &self.hp);
        }
        let mean: f64 = kvec.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum();
        let v = linalg::solve_lower(&self.l, &kvec)?;
        let var = self.hp.outputscale - v.iter().map(|z| z * z).sum::<f64>();
        // numerically the subtraction can dip below zero at near-duplicate inputs
        let var = var.max(1e-12 * self.hp.outputscale);
        Ok(GpPosterior { mean, variance: var })
    }

    pub fn predict(&self, x_query: &Tensor<f64>) -> Result<Vec<GpPosterior>> {
        (0..x_query.shape()[0]).map(|i| self.predict_one(x_query.row(i))).collect()
    }

    /// log p(y | X, hp) of the data this factorization was built from.
    pub fn log_marginal_likelihood(&self, y_obs: &[f64]) -> f64 {
        let n = self.n_obs();
        let fit: f64 = y_obs.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum();
        let logdet: f64 = (0..n).map(|i| self.l.data()[i * n + i].ln()).sum();
        -0.5 * fit - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Exact GP posterior at each query; empty observations give the prior (0, c).
pub fn posterior(
    x_obs: &Tensor<f64>,
    y_obs: &[f64],
    hp: &GpHyperparams,
    x_query: &Tensor<f64>,
) -> Result<Vec<GpPosterior>> {
    hp.validate()?;
    if x_obs.shape()[0] == 0 {
        return Ok(vec![GpPosterior { mean: 0.0, variance: hp.outputscale }; x_query.shape()[0]]);
    }
    GpFactorization::new(x_obs, y_obs, hp)?.predict(x_query)
}

/// Draw y ~ N(0, K(X) + noise I) via the Cholesky factor; deterministic per seed.
pub fn sample_prior(x: &Tensor<f64>, hp: &GpHyperparams, seed: u64) -> Result<Vec<f64>> {
    hp.validate()?;
    let n = x.shape()[0];
    if n == 0 {
        return Err(CoreError::contract("sample_prior", "need at least one input"));
    }
    let k = gram_with_noise(x, hp);
    let (l, _) = linalg::cholesky(&k, JitterPolicy::default())?;
    let mut rng = rng_from(seed);
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..=i {
            acc += l.data()[i * n + j] * z[j];
        }
        y[i] = acc;
    }
    Ok(y)
}

pub fn log_marginal_likelihood(
    x_obs: &Tensor<f64>,
    y_obs: &[f64],
    hp: &GpHyperparams,
) -> Result<f64> {
    if x_obs.shape()[0] == 0 {
        return Err(CoreError::contract("log_marginal_likelihood", "need at least one observation"));
    }
    Ok(GpFactorization::new(x_obs, y_obs, hp)?.log_marginal_likelihood(y_obs))
}

/// Log marginal likelihood together with its gradient in
/// (lengthscale, outputscale, noise), using the trace identity
/// d lml = 1/2 tr((alpha alpha^T - K^{-1}) dK).
pub fn lml_with_grad(
    x_obs: &Tensor<f64>,
    y_obs: &[f64],
    hp: &GpHyperparams,
) -> Result<(f64, [f64; 3])> {
    let n = x_obs.shape()[0];
    if n == 0 {
        return Err(CoreError::contract("lml_with_grad", "need at least one observation"));
    }
    let fact = GpFactorization::new(x_obs, y_obs, hp)?;
    let lml = fact.log_marginal_likelihood(y_obs);
    let alpha = &fact.alpha;
    let kinv = linalg::cholesky_inverse(&fact.l)?;

    let y_alpha: f64 = y_obs.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
    let alpha_sq: f64 = alpha.iter().map(|a| a * a).sum();
    let tr_kinv: f64 = (0..n).map(|i| kinv.data()[i * n + i]).sum();

    // noise: dK = I
    let d_noise = 0.5 * (alpha_sq - tr_kinv);

    // outputscale: dK = (K - noise I) / c, and K alpha = y
    let mut tr_kinv_knl = 0.0;
    let mut quad_l = 0.0;
    let mut tr_kinv_dl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let r = sq_dist(x_obs.row(i), x_obs.row(j)).sqrt();
            let dl = matern52_dlengthscale(r, hp);
            quad_l += alpha[i] * dl * alpha[j];
            tr_kinv_dl += kinv.data()[i * n + j] * dl;
            let knl = matern52_radial(r, hp);
            tr_kinv_knl += kinv.data()[i * n + j] * knl;
        }
    }
    let d_outputscale =
        0.5 * ((y_alpha - hp.noise * alpha_sq) - tr_kinv_knl) / hp.outputscale;
    let d_lengthscale = 0.5 * (quad_l - tr_kinv_dl);

    Ok((lml, [d_lengthscale, d_outputscale, d_noise]))
}
