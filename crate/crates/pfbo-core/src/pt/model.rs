//! The probabilistic-transformer surrogate: set-valued encoder over
//! observation tokens and query tokens with a bucket-classification head.
//!
//! Observation tokens attend to all observation tokens; query tokens attend
//! to the observations and to themselves only, so no query ever influences
//! another. There are no positional encodings. Targets are z-scored with the
//! observation statistics before embedding and the bucket borders are mapped
//! back accordingly on the way out.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;

use pfbo_tensor::{Graph, Real, Tensor, Var};

use crate::error::{CoreError, Result};
use crate::prior::HyperPrior;
use crate::pt::config::PtConfig;
use crate::riemann::{RiemannPosterior, RiemannSpec};
use crate::rng::{derive_seed, rng_from};

/// Floor applied to the observation standard deviation when z-scoring.
pub const ZSCORE_STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    pub ln1_g: Tensor<T>,
    pub ln1_b: Tensor<T>,
    pub ff1_w: Tensor<T>,
    pub ff1_b: Tensor<T>,
    pub ff2_w: Tensor<T>,
    pub ff2_b: Tensor<T>,
    pub ln2_g: Tensor<T>,
    pub ln2_b: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtParams<T> {
    pub x_embed_w: Tensor<T>,
    pub x_embed_b: Tensor<T>,
    pub y_embed_w: Tensor<T>,
    pub y_embed_b: Tensor<T>,
    pub no_target: Tensor<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub head_w: Tensor<T>,
    pub head_b: Tensor<T>,
}

impl<T: Real> PtParams<T> {
    /// PyTorch-style linear init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init(cfg: &PtConfig, seed: u64) -> Self {
        let mut rng = rng_from(derive_seed(seed, &[0x1217]));
        let mut lin = |fan_in: usize, shape: &[usize]| -> Tensor<T> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..bound)))
        };
        let emb = cfg.emb;
        let hidden = 4 * emb;
        let blocks = (0..cfg.layers)
            .map(|_| BlockParams {
                wq: lin(emb, &[emb, emb]),
                bq: lin(emb, &[emb]),
                wk: lin(emb, &[emb, emb]),
                bk: lin(emb, &[emb]),
                wv: lin(emb, &[emb, emb]),
                bv: lin(emb, &[emb]),
                wo: lin(emb, &[emb, emb]),
                bo: lin(emb, &[emb]),
                ln1_g: Tensor::full(&[emb], T::one()),
                ln1_b: Tensor::zeros(&[emb]),
                ff1_w: lin(emb, &[emb, hidden]),
                ff1_b: lin(emb, &[hidden]),
                ff2_w: lin(hidden, &[hidden, emb]),
                ff2_b: lin(hidden, &[emb]),
                ln2_g: Tensor::full(&[emb], T::one()),
                ln2_b: Tensor::zeros(&[emb]),
            })
            .collect();
        PtParams {
            x_embed_w: lin(cfg.d, &[cfg.d, emb]),
            x_embed_b: lin(cfg.d, &[emb]),
            y_embed_w: lin(1, &[1, emb]),
            y_embed_b: lin(1, &[emb]),
            no_target: Tensor::zeros(&[emb]),
            blocks,
            head_w: lin(emb, &[emb, cfg.n_buckets]),
            head_b: lin(emb, &[cfg.n_buckets]),
        }
    }

    /// Stable (name, tensor) enumeration shared by the optimizer and the
    /// checkpoint format.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![
            ("embed/x_w".into(), &self.x_embed_w),
            ("embed/x_b".into(), &self.x_embed_b),
            ("embed/y_w".into(), &self.y_embed_w),
            ("embed/y_b".into(), &self.y_embed_b),
            ("embed/no_target".into(), &self.no_target),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (suffix, t) in [
                ("wq", &b.wq),
                ("bq", &b.bq),
                ("wk", &b.wk),
                ("bk", &b.bk),
                ("wv", &b.wv),
                ("bv", &b.bv),
                ("wo", &b.wo),
                ("bo", &b.bo),
                ("ln1_g", &b.ln1_g),
                ("ln1_b", &b.ln1_b),
                ("ff1_w", &b.ff1_w),
                ("ff1_b", &b.ff1_b),
                ("ff2_w", &b.ff2_w),
                ("ff2_b", &b.ff2_b),
                ("ln2_g", &b.ln2_g),
                ("ln2_b", &b.ln2_b),
            ] {
                out.push((format!("block{}/{}", i, suffix), t));
            }
        }
        out.push(("head/w".into(), &self.head_w));
        out.push(("head/b".into(), &self.head_b));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = vec![
            ("embed/x_w".into(), &mut self.x_embed_w),
            ("embed/x_b".into(), &mut self.x_embed_b),
            ("embed/y_w".into(), &mut self.y_embed_w),
            ("embed/y_b".into(), &mut self.y_embed_b),
            ("embed/no_target".into(), &mut self.no_target),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (suffix, t) in [
                ("wq", &mut b.wq),
                ("bq", &mut b.bq),
                ("wk", &mut b.wk),
                ("bk", &mut b.bk),
                ("wv", &mut b.wv),
                ("bv", &mut b.bv),
                ("wo", &mut b.wo),
                ("bo", &mut b.bo),
                ("ln1_g", &mut b.ln1_g),
                ("ln1_b", &mut b.ln1_b),
                ("ff1_w", &mut b.ff1_w),
                ("ff1_b", &mut b.ff1_b),
                ("ff2_w", &mut b.ff2_w),
                ("ff2_b", &mut b.ff2_b),
                ("ln2_g", &mut b.ln2_g),
                ("ln2_b", &mut b.ln2_b),
            ] {
                out.push((format!("block{}/{}", i, suffix), t));
            }
        }
        out.push(("head/w".into(), &mut self.head_w));
        out.push(("head/b".into(), &mut self.head_b));
        out
    }
}

/// Graph handles to every parameter, in `named()` order.
pub struct PtBinding {
    pub vars: Vec<Var>,
}

impl PtBinding {
    pub fn bind<T: Real>(g: &mut Graph<T>, params: &PtParams<T>, trainable: bool) -> Self {
        let vars = params
            .named()
            .into_iter()
            .map(|(_, t)| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        PtBinding { vars }
    }
}

/// Index helpers into the binding; must mirror `PtParams::named` order.
struct BlockVars {
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
    bo: Var,
    ln1_g: Var,
    ln1_b: Var,
    ff1_w: Var,
    ff1_b: Var,
    ff2_w: Var,
    ff2_b: Var,
    ln2_g: Var,
    ln2_b: Var,
}

const EMBED_VARS: usize = 5;
const BLOCK_VARS: usize = 16;

fn block_vars(binding: &PtBinding, i: usize) -> BlockVars {
    let o = EMBED_VARS + i * BLOCK_VARS;
    let v = &binding.vars;
    BlockVars {
        wq: v[o],
        bq: v[o + 1],
        wk: v[o + 2],
        bk: v[o + 3],
        wv: v[o + 4],
        bv: v[o + 5],
        wo: v[o + 6],
        bo: v[o + 7],
        ln1_g: v[o + 8],
        ln1_b: v[o + 9],
        ff1_w: v[o + 10],
        ff1_b: v[o + 11],
        ff2_w: v[o + 12],
        ff2_b: v[o + 13],
        ln2_g: v[o + 14],
        ln2_b: v[o + 15],
    }
}

const LN_EPS: f64 = 1e-5;

fn linear<T: Real>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let h = g.matmul(x, w)?;
    Ok(g.add(h, b)?)
}

/// One masked attention pass over the two token groups. `obs` is `None` when
/// there are no observations; queries then attend only to themselves.
fn attention<T: Real>(
    g: &mut Graph<T>,
    cfg: &PtConfig,
    blk: &BlockVars,
    obs: Option<Var>,
    query: Var,
) -> Result<(Option<Var>, Var)> {
    let dh = cfg.head_dim();
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());

    let q_q = linear(g, query, blk.wq, blk.bq)?;
    let k_q = linear(g, query, blk.wk, blk.bk)?;
    let v_q = linear(g, query, blk.wv, blk.bv)?;
    let obs_proj = match obs {
        Some(o) => Some((
            linear(g, o, blk.wq, blk.bq)?,
            linear(g, o, blk.wk, blk.bk)?,
            linear(g, o, blk.wv, blk.bv)?,
        )),
        None => None,
    };

    let n_pred = g.value(query).shape()[0];
    let mut obs_heads = Vec::with_capacity(cfg.heads);
    let mut query_heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (from, to) = (h * dh, (h + 1) * dh);
        let qq_h = g.slice_cols(q_q, from, to)?;
        let kq_h = g.slice_cols(k_q, from, to)?;
        let vq_h = g.slice_cols(v_q, from, to)?;

        // self-affinity of each query token with itself
        let qk_self = g.mul(qq_h, kq_h)?;
        let self_scores = g.sum_rows(qk_self)?;
        let self_scores = g.mul_scalar(self_scores, scale);
        let self_col = g.reshape(self_scores, &[n_pred, 1])?;

        match &obs_proj {
            Some((qo, ko, vo)) => {
                let qo_h = g.slice_cols(*qo, from, to)?;
                let ko_h = g.slice_cols(*ko, from, to)?;
                let vo_h = g.slice_cols(*vo, from, to)?;

                // observation tokens: full self-attention among themselves
                let so = g.matmul_tb(qo_h, ko_h)?;
                let so = g.mul_scalar(so, scale);
                let ao = g.softmax_rows(so)?;
                let ctx_o = g.matmul(ao, vo_h)?;
                obs_heads.push(ctx_o);

                // query tokens: attend to observations plus themselves
                let sq = g.matmul_tb(qq_h, ko_h)?;
                let sq = g.mul_scalar(sq, scale);
                let scores = g.concat_cols(&[sq, self_col])?;
                let attn = g.softmax_rows(scores)?;
                let n_obs = g.value(*vo).shape()[0];
                let w_obs = g.slice_cols(attn, 0, n_obs)?;
                let w_self = g.slice_cols(attn, n_obs, n_obs + 1)?;
                let w_self = g.reshape(w_self, &[n_pred])?;
                let ctx_obs = g.matmul(w_obs, vo_h)?;
                let ctx_self = g.scale_rows(vq_h, w_self)?;
                query_heads.push(g.add(ctx_obs, ctx_self)?);
            }
            None => {
                // single-key softmax is identically 1
                query_heads.push(vq_h);
            }
        }
    }

    let ctx_q = g.concat_cols(&query_heads)?;
    let out_q = linear(g, ctx_q, blk.wo, blk.bo)?;
    let out_o = match obs_heads.is_empty() {
        true => None,
        false => {
            let ctx_o = g.concat_cols(&obs_heads)?;
            Some(linear(g, ctx_o, blk.wo, blk.bo)?)
        }
    };
    Ok((out_o, out_q))
}

fn feed_forward<T: Real>(g: &mut Graph<T>, blk: &BlockVars, x: Var) -> Result<Var> {
    let h = linear(g, x, blk.ff1_w, blk.ff1_b)?;
    let h = g.gelu(h);
    linear(g, h, blk.ff2_w, blk.ff2_b)
}

fn encoder_block<T: Real>(
    g: &mut Graph<T>,
    cfg: &PtConfig,
    blk: &BlockVars,
    obs: Option<Var>,
    query: Var,
) -> Result<(Option<Var>, Var)> {
    let (attn_o, attn_q) = attention(g, cfg, blk, obs, query)?;
    let norm1 = |g: &mut Graph<T>, x: Var, a: Var| -> Result<Var> {
        let r = g.add(x, a)?;
        Ok(g.layer_norm(r, blk.ln1_g, blk.ln1_b, LN_EPS)?)
    };
    let obs = match (obs, attn_o) {
        (Some(o), Some(a)) => Some(norm1(g, o, a)?),
        _ => None,
    };
    let query = norm1(g, query, attn_q)?;

    let norm2 = |g: &mut Graph<T>, x: Var| -> Result<Var> {
        let f = feed_forward(g, blk, x)?;
        let r = g.add(x, f)?;
        Ok(g.layer_norm(r, blk.ln2_g, blk.ln2_b, LN_EPS)?)
    };
    let obs = match obs {
        Some(o) => Some(norm2(g, o)?),
        None => None,
    };
    let query = norm2(g, query)?;
    Ok((obs, query))
}

/// Run the encoder and return bucket logits at the query points
/// ([n_pred, n_buckets]). `obs_y_z` must already be z-scored.
pub fn forward_logits<T: Real>(
    g: &mut Graph<T>,
    binding: &PtBinding,
    cfg: &PtConfig,
    obs_x: &Tensor<T>,
    obs_y_z: &[T],
    pred_x: &Tensor<T>,
) -> Result<Var> {
    let n_obs = obs_x.shape()[0];
    let n_pred = pred_x.shape()[0];
    if n_pred == 0 {
        return Err(CoreError::contract("forward", "need at least one query point"));
    }
    let v = &binding.vars;
    let (x_w, x_b, y_w, y_b, no_target) = (v[0], v[1], v[2], v[3], v[4]);

    let pred_in = g.constant(pred_x.clone());
    let query = linear(g, pred_in, x_w, x_b)?;
    let query = g.add(query, no_target)?;

    let mut obs = if n_obs > 0 {
        let obs_in = g.constant(obs_x.clone());
        let xe = linear(g, obs_in, x_w, x_b)?;
        let ycol = g.constant(Tensor::new(vec![n_obs, 1], obs_y_z.to_vec())?);
        let ye = linear(g, ycol, y_w, y_b)?;
        Some(g.add(xe, ye)?)
    } else {
        None
    };

    let mut query = query;
    for i in 0..cfg.layers {
        let blk = block_vars(binding, i);
        let (o, q) = encoder_block(g, cfg, &blk, obs, query)?;
        obs = o;
        query = q;
    }

    let (head_w, head_b) = (v[v.len() - 2], v[v.len() - 1]);
    linear(g, query, head_w, head_b)
}

/// Observation-statistics z-transform: returns (mean, std) with the std
/// floored; identity (0, 1) when there are no observations.
pub fn zscore_stats(obs_y: &[f64]) -> (f64, f64) {
    if obs_y.is_empty() {
        return (0.0, 1.0);
    }
    let n = obs_y.len() as f64;
    let mean = obs_y.iter().sum::<f64>() / n;
    let var = obs_y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(ZSCORE_STD_FLOOR))
}

/// A trained (or freshly initialized) transformer with its bucket grid in
/// z-units, generic over the stored precision.
#[derive(Debug)]
pub struct PtNet<T: Real> {
    pub cfg: PtConfig,
    pub params: PtParams<T>,
    pub spec_z: Arc<RiemannSpec>,
    pub hyperprior: HyperPrior,
    pub train_seed: u64,
    forward_calls: AtomicU64,
}

impl<T: Real> Clone for PtNet<T> {
    fn clone(&self) -> Self {
        PtNet {
            cfg: self.cfg.clone(),
            params: self.params.clone(),
            spec_z: Arc::clone(&self.spec_z),
            hyperprior: self.hyperprior.clone(),
            train_seed: self.train_seed,
            forward_calls: AtomicU64::new(0),
        }
    }
}

impl<T: Real> PtNet<T> {
    pub fn new(
        cfg: PtConfig,
        params: PtParams<T>,
        spec_z: Arc<RiemannSpec>,
        hyperprior: HyperPrior,
        train_seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if spec_z.n_buckets() != cfg.n_buckets {
            return Err(CoreError::contract(
                "PtNet::new",
                format!("spec has {} buckets, config wants {}", spec_z.n_buckets(), cfg.n_buckets),
            ));
        }
        Ok(PtNet { cfg, params, spec_z, hyperprior, train_seed, forward_calls: AtomicU64::new(0) })
    }

    /// Number of forward passes executed on this instance.
    pub fn forward_calls(&self) -> u64 {
        self.forward_calls.load(Ordering::Relaxed)
    }

    fn check_inputs(&self, x: &Tensor<f64>, what: &'static str) -> Result<()> {
        if x.rank() != 2 || x.shape()[1] != self.cfg.d {
            return Err(CoreError::contract(
                "forward",
                format!("{} must be [n, {}], got {:?}", what, self.cfg.d, x.shape()),
            ));
        }
        if x.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(CoreError::contract("forward", "inputs must lie in the unit cube"));
        }
        Ok(())
    }

    /// Posterior bucket distributions at the query points, with borders
    /// mapped back into raw target units via the observation z-statistics.
    pub fn posterior(
        &self,
        obs_x: &Tensor<f64>,
        obs_y: &[f64],
        pred_x: &Tensor<f64>,
    ) -> Result<RiemannPosterior> {
        self.check_inputs(obs_x, "observations")?;
        self.check_inputs(pred_x, "queries")?;
        if obs_x.shape()[0] != obs_y.len() {
            return Err(CoreError::contract("forward", "observation inputs/targets mismatch"));
        }
        self.forward_calls.fetch_add(1, Ordering::Relaxed);

        let (m, s) = zscore_stats(obs_y);
        let obs_y_z: Vec<T> = obs_y.iter().map(|&v| T::from_f64((v - m) / s)).collect();
        let obs_x_t: Tensor<T> = obs_x.cast();
        let pred_x_t: Tensor<T> = pred_x.cast();

        let mut g = Graph::<T>::new();
        let binding = PtBinding::bind(&mut g, &self.params, false);
        let logits = forward_logits(&mut g, &binding, &self.cfg, &obs_x_t, &obs_y_z, &pred_x_t)?;
        let probs_var = g.softmax_rows(logits)?;
        g.check_finite()?;
        let probs: Vec<f64> = g.value(probs_var).data().iter().map(|v| v.as_f64()).collect();

        // rows can miss exact normalization by float dust in f32
        let nb = self.cfg.n_buckets;
        let mut norm = probs;
        for row in norm.chunks_mut(nb) {
            let sum: f64 = row.iter().sum();
            for p in row.iter_mut() {
                *p /= sum;
            }
        }
        let spec_raw = Arc::new(self.spec_z.affine(s, m)?);
        RiemannPosterior::new(spec_raw, norm)
    }
}
