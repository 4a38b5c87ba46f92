//! Probabilistic transformer surrogate: architecture, training, checkpoint
//! persistence, and diagnostic probes.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod model;
pub mod probe;
pub mod reg;
pub mod train;

use std::sync::Arc;

use pfbo_tensor::{Dtype, Tensor};

use crate::error::Result;
use crate::prior::HyperPrior;
use crate::riemann::{RiemannPosterior, RiemannSpec};

pub use config::{default_epsilon, PtConfig, PtVariant};
pub use model::{PtNet, PtParams};
pub use train::{train, EpochStats};

/// A transformer surrogate in its stored precision.
#[derive(Debug, Clone)]
pub enum PtModel {
    F32(PtNet<f32>),
    F64(PtNet<f64>),
}

impl PtModel {
    /// Freshly initialized (untrained) model with an estimated bucket grid;
    /// the baseline for training-progress comparisons.
    pub fn init(cfg: &PtConfig, hp: &HyperPrior, seed: u64) -> Result<Self> {
        cfg.validate()?;
        hp.validate()?;
        let spec = Arc::new(train::estimate_spec(cfg, hp, seed)?);
        Ok(match cfg.precision {
            Dtype::F32 => PtModel::F32(PtNet::new(
                cfg.clone(),
                PtParams::init(cfg, seed),
                spec,
                hp.clone(),
                seed,
            )?),
            Dtype::F64 => PtModel::F64(PtNet::new(
                cfg.clone(),
                PtParams::init(cfg, seed),
                spec,
                hp.clone(),
                seed,
            )?),
        })
    }

    pub fn cfg(&self) -> &PtConfig {
        match self {
            PtModel::F32(n) => &n.cfg,
            PtModel::F64(n) => &n.cfg,
        }
    }

    pub fn spec_z(&self) -> &Arc<RiemannSpec> {
        match self {
            PtModel::F32(n) => &n.spec_z,
            PtModel::F64(n) => &n.spec_z,
        }
    }

    pub fn hyperprior(&self) -> &HyperPrior {
        match self {
            PtModel::F32(n) => &n.hyperprior,
            PtModel::F64(n) => &n.hyperprior,
        }
    }

    pub fn train_seed(&self) -> u64 {
        match self {
            PtModel::F32(n) => n.train_seed,
            PtModel::F64(n) => n.train_seed,
        }
    }

    pub fn forward_calls(&self) -> u64 {
        match self {
            PtModel::F32(n) => n.forward_calls(),
            PtModel::F64(n) => n.forward_calls(),
        }
    }

    /// Posterior bucket distributions at the query points (raw target units).
    pub fn posterior(
        &self,
        obs_x: &Tensor<f64>,
        obs_y: &[f64],
        pred_x: &Tensor<f64>,
    ) -> Result<RiemannPosterior> {
        match self {
            PtModel::F32(n) => n.posterior(obs_x, obs_y, pred_x),
            PtModel::F64(n) => n.posterior(obs_x, obs_y, pred_x),
        }
    }
}
