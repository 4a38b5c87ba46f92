//! Held-out evaluation: how close the transformer's bucket posterior is to
//! the exact GP posterior it was trained to imitate.

use rayon::prelude::*;

use crate::error::Result;
use crate::gp::{posterior as gp_posterior, GpPosterior};
use crate::prior::{sample_dataset, split_uniform};
use crate::pt::PtModel;
use crate::riemann::RiemannPosterior;
use crate::rng::derive_seed;
use crate::stats::normal_cdf;

/// Mean absolute difference between the bucket posterior CDF and a Gaussian
/// CDF, evaluated at the bucket borders, averaged over queries and borders.
pub fn cdf_discrepancy(post: &RiemannPosterior, exact: &[GpPosterior]) -> f64 {
    let borders = post.spec().borders();
    let mut acc = 0.0;
    let mut count = 0usize;
    for (j, g) in exact.iter().enumerate() {
        let sigma = g.variance.sqrt();
        for &b in borders {
            let model_cdf = post.cdf(j, b);
            let exact_cdf = normal_cdf((b - g.mean) / sigma);
            acc += (model_cdf - exact_cdf).abs();
            count += 1;
        }
    }
    acc / count as f64
}

/// Average CDF discrepancy against the exact GP posterior (generating kernel
/// parameters known) over freshly drawn held-out datasets.
pub fn heldout_cdf_discrepancy(model: &PtModel, n_datasets: usize, seed: u64) -> Result<f64> {
    let cfg = model.cfg();
    let hp = model.hyperprior().clone();
    let per: Vec<f64> = (0..n_datasets)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let s = derive_seed(seed, &[0xE7A1, k as u64]);
            let ds = sample_dataset(cfg.d, cfg.dataset_size, &hp, s)?;
            let ds = split_uniform(&ds, None, derive_seed(s, &[1]))?;
            let obs_x = ds.obs_x();
            let obs_y = ds.obs_y();
            let pred_x = ds.pred_x();
            let post = model.posterior(&obs_x, &obs_y, &pred_x)?;
            let exact = gp_posterior(&obs_x, &obs_y, &ds.theta, &pred_x)?;
            Ok(cdf_discrepancy(&post, &exact))
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Mean (unweighted) KL between posterior rows at prediction-point pairs
/// within distance epsilon, over held-out datasets. Measures how stationary
/// the learned posterior map is.
pub fn heldout_neighbor_kl(
    model: &PtModel,
    epsilon: f64,
    n_datasets: usize,
    seed: u64,
) -> Result<f64> {
    let cfg = model.cfg();
    let hp = model.hyperprior().clone();
    let sums: Vec<(f64, usize)> = (0..n_datasets)
        .into_par_iter()
        .map(|k| -> Result<(f64, usize)> {
            let s = derive_seed(seed, &[0x4E1B, k as u64]);
            let ds = sample_dataset(cfg.d, cfg.dataset_size, &hp, s)?;
            let ds = split_uniform(&ds, None, derive_seed(s, &[1]))?;
            let pred_x = ds.pred_x();
            let post = model.posterior(&ds.obs_x(), &ds.obs_y(), &pred_x)?;
            let pairs = crate::pt::reg::epsilon_pairs(&pred_x, epsilon);
            let total: f64 = pairs
                .iter()
                .map(|p| crate::riemann::kl_rows(post.row(p.j), post.row(p.i)))
                .sum();
            Ok((total, pairs.len()))
        })
        .collect::<Result<_>>()?;
    let (total, count) = sums
        .into_iter()
        .fold((0.0, 0usize), |(a, c), (t, n)| (a + t, c + n));
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}
