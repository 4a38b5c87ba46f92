//! Posterior-sensitivity probe: dense observations near the domain edges, a
//! growing number of observations in the centre, and the KL movement of the
//! central posterior per added point.

use rand::Rng;

use pfbo_tensor::Tensor;

use crate::error::{CoreError, Result};
use crate::gp::{sample_prior, GpHyperparams};
use crate::pt::PtModel;
use crate::riemann::{kl_rows, rebin, RiemannSpec};
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Clone)]
pub struct ProbeScenario {
    pub seed: u64,
    /// Observations in each edge interval [0, 0.15] and [0.85, 1].
    pub n_edge: usize,
    /// Maximum number of central observations added one by one.
    pub k_max: usize,
    /// Query grid size inside the central interval [0.45, 0.55].
    pub n_eval: usize,
    /// Kernel parameters of the GP the scenario function is drawn from.
    pub theta: GpHyperparams,
}

impl Default for ProbeScenario {
    fn default() -> Self {
        ProbeScenario {
            seed: 0,
            n_edge: 10,
            k_max: 8,
            n_eval: 11,
            theta: GpHyperparams { lengthscale: 0.2, outputscale: 1.0, noise: 1e-4 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRecord {
    pub k: usize,
    /// Mean KL over the query grid between the posterior after k and after
    /// k-1 central points (0 at k = 0).
    pub kl_step: f64,
    /// Posterior mean averaged over the query grid.
    pub mean: f64,
    /// Posterior variance averaged over the query grid.
    pub variance: f64,
}

/// Run the probe protocol on a trained 1-d model.
pub fn sensitivity_probe(model: &PtModel, sc: &ProbeScenario) -> Result<Vec<ProbeRecord>> {
    if model.cfg().d != 1 {
        return Err(CoreError::contract("sensitivity_probe", "protocol is defined for d = 1"));
    }
    let mut rng = rng_from(derive_seed(sc.seed, &[0x9206]));
    let mut xs: Vec<f64> = Vec::new();
    for _ in 0..sc.n_edge {
        xs.push(rng.random_range(0.0..0.15));
    }
    for _ in 0..sc.n_edge {
        xs.push(rng.random_range(0.85..1.0));
    }
    let central: Vec<f64> = (0..sc.k_max).map(|_| rng.random_range(0.45..0.55)).collect();
    let eval: Vec<f64> = (0..sc.n_eval)
        .map(|i| 0.45 + 0.1 * i as f64 / (sc.n_eval - 1).max(1) as f64)
        .collect();

    // one coherent function draw over every location involved
    let mut all = xs.clone();
    all.extend_from_slice(&central);
    let all_x = Tensor::new(vec![all.len(), 1], all.clone())?;
    let y_all = sample_prior(&all_x, &sc.theta, derive_seed(sc.seed, &[0xF00D]))?;

    let eval_x = Tensor::new(vec![eval.len(), 1], eval)?;
    let mut records = Vec::with_capacity(sc.k_max + 1);
    let mut prev: Option<(RiemannSpec, Vec<Vec<f64>>)> = None;
    let mut ref_spec: Option<RiemannSpec> = None;
    for k in 0..=sc.k_max {
        let n_obs = xs.len() + k;
        let obs_x = Tensor::new(vec![n_obs, 1], all[..n_obs].to_vec())?;
        let obs_y = &y_all[..n_obs];
        let post = model.posterior(&obs_x, obs_y, &eval_x)?;

        // fixed reference grid (from k = 0) so KL is comparable across k
        let spec = post.spec().clone();
        if ref_spec.is_none() {
            ref_spec = Some(spec.clone());
        }
        let reference = ref_spec.as_ref().unwrap();
        let rows: Vec<Vec<f64>> =
            (0..post.n_queries()).map(|j| rebin(post.row(j), &spec, reference)).collect();

        let kl_step = match &prev {
            None => 0.0,
            Some((_, prev_rows)) => {
                let total: f64 = rows
                    .iter()
                    .zip(prev_rows.iter())
                    .map(|(now, before)| kl_rows(now, before))
                    .sum();
                total / rows.len() as f64
            }
        };
        let (mut mean_acc, mut var_acc) = (0.0, 0.0);
        for j in 0..post.n_queries() {
            let (m, v) = post.mean_and_variance(j);
            mean_acc += m;
            var_acc += v;
        }
        let nq = post.n_queries() as f64;
        records.push(ProbeRecord { k, kl_step, mean: mean_acc / nq, variance: var_acc / nq });
        prev = Some((spec, rows));
    }
    Ok(records)
}

/// First k whose KL step reaches the threshold; k_max + 1 when none does.
pub fn adaptation_index(records: &[ProbeRecord], threshold: f64) -> usize {
    records
        .iter()
        .find(|r| r.k > 0 && r.kl_step >= threshold)
        .map(|r| r.k)
        .unwrap_or(records.len())
}

/// CSV serialization with columns k, kl_step, mean, variance.
pub fn records_csv(records: &[ProbeRecord]) -> String {
    let mut s = String::from("k,kl_step,mean,variance\n");
    for r in records {
        s.push_str(&format!("{},{},{},{}\n", r.k, r.kl_step, r.mean, r.variance));
    }
    s
}
