//! Training loop: synthetic batches from the dataset prior, cross-entropy on
//! the true buckets plus the weighted stationarity penalty, AdamW with linear
//! warmup and cosine decay.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use pfbo_tensor::{Dtype, Graph, Real, Tensor, Var};

use crate::error::{CoreError, Result};
use crate::prior::{sample_dataset, split_softmax, split_uniform, HyperPrior};
use crate::pt::config::PtConfig;
use crate::pt::model::{forward_logits, zscore_stats, PtBinding, PtNet, PtParams};
use crate::pt::reg::{epsilon_pairs, BallPair};
use crate::pt::PtModel;
use crate::riemann::RiemannSpec;
use crate::rng::{derive_seed, rng_from};

/// Global count of optimizer steps ever taken in this process. BO runs with a
/// frozen checkpoint assert that it does not move.
pub static TRAIN_STEP_COUNT: AtomicU64 = AtomicU64::new(0);

const TAG_SPEC: u64 = 0xB0C4;
const TAG_DATA: u64 = 0xDA7A;
const TAG_SPLIT: u64 = 0x5917;
const TAG_NOBS: u64 = 0x0B51;

/// Per-epoch loss telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_ce: f64,
    pub mean_reg: f64,
    pub mean_total: f64,
    pub lr: f64,
}

/// Learning rate at an optimizer step: linear warmup over the warmup epochs,
/// then cosine decay to zero.
pub fn lr_at(cfg: &PtConfig, step: usize) -> f64 {
    let warmup = cfg.warmup_epochs * cfg.epoch_size;
    let total = cfg.total_steps();
    if warmup > 0 && step < warmup {
        return cfg.lr * (step + 1) as f64 / warmup as f64;
    }
    if total <= warmup {
        return cfg.lr;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// One training example: a split synthetic dataset in z-units.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub obs_x: Tensor<f64>,
    pub obs_y_z: Vec<f64>,
    pub pred_x: Tensor<f64>,
    pub target_buckets: Vec<usize>,
    pub pairs: Vec<BallPair>,
}

fn split_for(cfg: &PtConfig, ds: &crate::prior::SyntheticDataset, seed: u64) -> Result<crate::prior::SyntheticDataset> {
    if cfg.non_uniform_split {
        let n = ds.len();
        let n_obs = rng_from(derive_seed(seed, &[TAG_NOBS])).random_range(1..n);
        split_softmax(ds, n_obs, derive_seed(seed, &[TAG_SPLIT]))
    } else {
        split_uniform(ds, None, derive_seed(seed, &[TAG_SPLIT]))
    }
}

/// Sample, split, and z-score one training example.
pub fn sample_train_item(
    cfg: &PtConfig,
    hp: &HyperPrior,
    spec_z: &RiemannSpec,
    seed: u64,
) -> Result<TrainItem> {
    let ds = sample_dataset(cfg.d, cfg.dataset_size, hp, derive_seed(seed, &[TAG_DATA]))?;
    let ds = split_for(cfg, &ds, seed)?;
    let obs_y = ds.obs_y();
    let (m, s) = zscore_stats(&obs_y);
    let obs_y_z: Vec<f64> = obs_y.iter().map(|v| (v - m) / s).collect();
    let pred_x = ds.pred_x();
    let target_buckets: Vec<usize> =
        ds.pred_y().iter().map(|v| spec_z.bucket_of((v - m) / s)).collect();
    let pairs = if cfg.lambda_reg > 0.0 { epsilon_pairs(&pred_x, cfg.epsilon) } else { Vec::new() };
    Ok(TrainItem { obs_x: ds.obs_x(), obs_y_z, pred_x, target_buckets, pairs })
}

/// Estimate the bucket borders once, before training: batch_size x 10
/// datasets are sampled and split exactly like training examples, and every
/// target (z-scored with its dataset's observation statistics) feeds the
/// empirical quantile grid.
pub fn estimate_spec(cfg: &PtConfig, hp: &HyperPrior, seed: u64) -> Result<RiemannSpec> {
    let n_sets = cfg.batch_size * 10;
    let samples: Vec<Vec<f64>> = (0..n_sets)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let s = derive_seed(seed, &[TAG_SPEC, k as u64]);
            let ds = sample_dataset(cfg.d, cfg.dataset_size, hp, derive_seed(s, &[TAG_DATA]))?;
            let ds = split_for(cfg, &ds, s)?;
            let (m, sd) = zscore_stats(&ds.obs_y());
            Ok(ds.y.iter().map(|v| (v - m) / sd).collect())
        })
        .collect::<Result<_>>()?;
    let all: Vec<f64> = samples.into_iter().flatten().collect();
    debug_assert_eq!(all.len(), cfg.spec_estimate_samples());
    RiemannSpec::from_samples(&all, cfg.n_buckets)
}

/// Per-example loss terms in the graph: mean cross-entropy on the true
/// buckets and, when regularised, the pair-normalized stationarity penalty.
fn element_terms<T: Real>(
    g: &mut Graph<T>,
    binding: &PtBinding,
    cfg: &PtConfig,
    item: &TrainItem,
) -> Result<(Var, Option<Var>)> {
    let obs_x: Tensor<T> = item.obs_x.cast();
    let obs_y: Vec<T> = item.obs_y_z.iter().map(|&v| T::from_f64(v)).collect();
    let pred_x: Tensor<T> = item.pred_x.cast();
    let logits = forward_logits(g, binding, cfg, &obs_x, &obs_y, &pred_x)?;
    let logp = g.log_softmax_rows(logits)?;

    let picked = g.gather_index(logp, item.target_buckets.clone())?;
    let neg = g.mul_scalar(picked, T::from_f64(-1.0));
    let ce = g.mean_all(neg);

    let reg = if cfg.lambda_reg > 0.0 && !item.pairs.is_empty() {
        let js: Vec<usize> = item.pairs.iter().map(|p| p.j).collect();
        let is: Vec<usize> = item.pairs.iter().map(|p| p.i).collect();
        let w = Tensor::from_f64_slice(
            &[item.pairs.len()],
            &item.pairs.iter().map(|p| p.weight).collect::<Vec<_>>(),
        )?;
        let lp_j = g.select_rows(logp, js)?;
        let lp_i = g.select_rows(logp, is)?;
        let diff = g.sub(lp_j, lp_i)?;
        let p_j = g.exp(lp_j);
        let contrib = g.mul(p_j, diff)?;
        let row_kl = g.sum_rows(contrib)?;
        let wv = g.constant(w);
        let weighted = g.mul(row_kl, wv)?;
        let total = g.sum_all(weighted);
        Some(g.mul_scalar(total, T::from_f64(1.0 / item.pairs.len() as f64)))
    } else {
        None
    };
    Ok((ce, reg))
}

/// Build the total loss for a batch into one graph. Returns
/// (loss, mean CE, mean penalty); the scalar components are read back for
/// telemetry. The training loop itself differentiates per-example graphs in
/// parallel; this single-graph form is what gradient checks exercise.
pub fn batch_loss<T: Real>(
    g: &mut Graph<T>,
    binding: &PtBinding,
    cfg: &PtConfig,
    items: &[TrainItem],
) -> Result<(Var, f64, f64)> {
    let mut ce_acc: Option<Var> = None;
    let mut reg_acc: Option<Var> = None;
    for item in items {
        let (ce, reg) = element_terms(g, binding, cfg, item)?;
        ce_acc = Some(match ce_acc {
            Some(acc) => g.add(acc, ce)?,
            None => ce,
        });
        if let Some(r) = reg {
            reg_acc = Some(match reg_acc {
                Some(acc) => g.add(acc, r)?,
                None => r,
            });
        }
    }
    let inv_b = T::from_f64(1.0 / items.len() as f64);
    let ce_mean = g.mul_scalar(ce_acc.expect("non-empty batch"), inv_b);
    let ce_val = g.value(ce_mean).item()?.as_f64();
    let (loss, reg_val) = match reg_acc {
        Some(acc) => {
            let reg_mean = g.mul_scalar(acc, inv_b);
            let reg_val = g.value(reg_mean).item()?.as_f64();
            let weighted = g.mul_scalar(reg_mean, T::from_f64(cfg.lambda_reg));
            (g.add(ce_mean, weighted)?, reg_val)
        }
        None => (ce_mean, 0.0),
    };
    Ok((loss, ce_val, reg_val))
}

/// Gradient of one example's loss (ce + lambda * reg) with respect to every
/// parameter, computed in its own graph so examples can run on separate
/// threads.
fn element_grads<T: Real>(
    params: &PtParams<T>,
    cfg: &PtConfig,
    item: &TrainItem,
) -> Result<(f64, f64, Vec<Tensor<T>>)> {
    let mut g = Graph::<T>::new();
    let binding = PtBinding::bind(&mut g, params, true);
    let (ce, reg) = element_terms(&mut g, &binding, cfg, item)?;
    let ce_val = g.value(ce).item()?.as_f64();
    let (loss, reg_val) = match reg {
        Some(r) => {
            let reg_val = g.value(r).item()?.as_f64();
            let weighted = g.mul_scalar(r, T::from_f64(cfg.lambda_reg));
            (g.add(ce, weighted)?, reg_val)
        }
        None => (ce, 0.0),
    };
    g.backward(loss)?;
    g.check_finite()?;
    let grads = binding.vars.iter().map(|&v| g.grad_or_zeros(v)).collect();
    Ok((ce_val, reg_val, grads))
}

struct AdamW<T: Real> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl<T: Real> AdamW<T> {
    fn new(params: &PtParams<T>, cfg: &PtConfig) -> Self {
        let shapes: Vec<Tensor<T>> =
            params.named().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamW {
            m: shapes.clone(),
            v: shapes,
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
            weight_decay: cfg.weight_decay,
        }
    }

    /// Decoupled weight decay: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
    fn step(&mut self, params: &mut PtParams<T>, grads: &[Tensor<T>], lr: f64) {
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let inv_bc1 = T::from_f64(1.0 / (1.0 - self.beta1.powi(self.t as i32)));
        let inv_bc2 = T::from_f64(1.0 / (1.0 - self.beta2.powi(self.t as i32)));
        let lr_t = T::from_f64(lr);
        let wd = T::from_f64(self.weight_decay);
        let eps = T::from_f64(self.eps);
        for (((mslot, vslot), (_, p)), grad) in self
            .m
            .iter_mut()
            .zip(self.v.iter_mut())
            .zip(params.named_mut())
            .zip(grads.iter())
        {
            debug_assert_eq!(mslot.shape(), p.shape());
            for (((m, v), pv), &gv) in mslot
                .data_mut()
                .iter_mut()
                .zip(vslot.data_mut().iter_mut())
                .zip(p.data_mut().iter_mut())
                .zip(grad.data())
            {
                *m = b1 * *m + (T::one() - b1) * gv;
                *v = b2 * *v + (T::one() - b2) * gv * gv;
                let m_hat = *m * inv_bc1;
                let v_hat = *v * inv_bc2;
                *pv = *pv - lr_t * (m_hat / (v_hat.sqrt() + eps) + wd * *pv);
            }
        }
    }
}

fn train_typed<T: Real>(
    cfg: &PtConfig,
    hp: &HyperPrior,
    seed: u64,
) -> Result<(PtNet<T>, Vec<EpochStats>)> {
    cfg.validate()?;
    hp.validate()?;
    let spec_z = Arc::new(estimate_spec(cfg, hp, seed)?);
    let mut params = PtParams::<T>::init(cfg, seed);
    let mut opt = AdamW::new(&params, cfg);
    let mut telemetry = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut ce_sum = 0.0;
        let mut reg_sum = 0.0;
        let mut total_sum = 0.0;
        let mut last_lr = 0.0;
        for step_in_epoch in 0..cfg.epoch_size {
            let step = epoch * cfg.epoch_size + step_in_epoch;
            // sample the batch and differentiate each example's graph in
            // parallel, then reduce in batch order for determinism
            let per_element: Vec<(f64, f64, Vec<Tensor<T>>)> = (0..cfg.batch_size)
                .into_par_iter()
                .map(|b| {
                    let s = derive_seed(seed, &[TAG_DATA, step as u64, b as u64]);
                    let item = sample_train_item(cfg, hp, &spec_z, s)?;
                    element_grads(&params, cfg, &item)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| match e {
                    CoreError::Tensor(pfbo_tensor::TensorError::NonFinite { op }) => {
                        CoreError::TrainAbort {
                            epoch,
                            step,
                            reason: format!("non-finite value in {}", op),
                            diagnostics: format!(
                                "lr={} variant={}",
                                lr_at(cfg, step),
                                cfg.variant().name()
                            ),
                        }
                    }
                    other => other,
                })?;

            let inv_b = T::from_f64(1.0 / cfg.batch_size as f64);
            let mut grads: Vec<Tensor<T>> =
                params.named().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
            let mut ce_val = 0.0;
            let mut reg_val = 0.0;
            for (ce, reg, element) in &per_element {
                ce_val += ce;
                reg_val += reg;
                for (acc, g) in grads.iter_mut().zip(element.iter()) {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a = *a + b * inv_b;
                    }
                }
            }
            ce_val /= cfg.batch_size as f64;
            reg_val /= cfg.batch_size as f64;
            let loss_val = ce_val + cfg.lambda_reg * reg_val;
            if !loss_val.is_finite() {
                return Err(CoreError::TrainAbort {
                    epoch,
                    step,
                    reason: "non-finite loss".into(),
                    diagnostics: format!(
                        "ce={} reg={} lr={} variant={}",
                        ce_val,
                        reg_val,
                        lr_at(cfg, step),
                        cfg.variant().name()
                    ),
                });
            }
            let lr = lr_at(cfg, step);
            opt.step(&mut params, &grads, lr);
            TRAIN_STEP_COUNT.fetch_add(1, Ordering::Relaxed);

            ce_sum += ce_val;
            reg_sum += reg_val;
            total_sum += loss_val;
            last_lr = lr;
        }
        let k = cfg.epoch_size as f64;
        telemetry.push(EpochStats {
            epoch,
            mean_ce: ce_sum / k,
            mean_reg: reg_sum / k,
            mean_total: total_sum / k,
            lr: last_lr,
        });
    }

    let net = PtNet::new(cfg.clone(), params, spec_z, hp.clone(), seed)?;
    Ok((net, telemetry))
}

/// Train a transformer surrogate from scratch; deterministic per seed.
pub fn train(cfg: &PtConfig, hp: &HyperPrior, seed: u64) -> Result<(PtModel, Vec<EpochStats>)> {
    match cfg.precision {
        Dtype::F32 => {
            let (net, tel) = train_typed::<f32>(cfg, hp, seed)?;
            Ok((PtModel::F32(net), tel))
        }
        Dtype::F64 => {
            let (net, tel) = train_typed::<f64>(cfg, hp, seed)?;
            Ok((PtModel::F64(net), tel))
        }
    }
}
