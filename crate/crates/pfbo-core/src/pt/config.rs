//! Transformer surrogate configuration and the four training variants.

use pfbo_tensor::Dtype;

use crate::error::{CoreError, Result};

/// Training/architecture variant selection: uniform vs target-weighted
/// dataset splits, with or without the stationarity regulariser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtVariant {
    /// Uniform split, no regulariser.
    Pt,
    /// Uniform split, regularised.
    PtR,
    /// Non-uniform (softmax) split, no regulariser.
    PtNu,
    /// Non-uniform split, regularised.
    PtNuR,
}

impl PtVariant {
    pub fn non_uniform(self) -> bool {
        matches!(self, PtVariant::PtNu | PtVariant::PtNuR)
    }

    pub fn regularised(self) -> bool {
        matches!(self, PtVariant::PtR | PtVariant::PtNuR)
    }

    pub fn name(self) -> &'static str {
        match self {
            PtVariant::Pt => "pt",
            PtVariant::PtR => "pt-r",
            PtVariant::PtNu => "pt-nu",
            PtVariant::PtNuR => "pt-nur",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pt" => Ok(PtVariant::Pt),
            "pt-r" => Ok(PtVariant::PtR),
            "pt-nu" => Ok(PtVariant::PtNu),
            "pt-nur" => Ok(PtVariant::PtNuR),
            _ => Err(CoreError::param(format!(
                "unknown variant '{}'; expected pt|pt-r|pt-nu|pt-nur",
                s
            ))),
        }
    }
}

/// Full training and architecture configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PtConfig {
    pub d: usize,
    pub emb: usize,
    pub layers: usize,
    pub heads: usize,
    pub n_buckets: usize,
    /// Regulariser ball radius in input-space units.
    pub epsilon: f64,
    /// Regulariser weight; 0 disables the penalty entirely.
    pub lambda_reg: f64,
    /// Observation/prediction split law used during training.
    pub non_uniform_split: bool,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    /// Optimizer steps per epoch.
    pub epoch_size: usize,
    pub batch_size: usize,
    /// Size N of each synthetic training dataset.
    pub dataset_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub precision: Dtype,
}

/// Default regulariser radius per input dimension.
pub fn default_epsilon(d: usize) -> f64 {
    match d {
        0..=2 => 0.05,
        3..=6 => 0.5,
        _ => 1.0,
    }
}

impl PtConfig {
    /// Full-size training configuration.
    pub fn paper_scale(d: usize) -> Self {
        PtConfig {
            d,
            emb: 512,
            layers: 6,
            heads: 4,
            n_buckets: 100,
            epsilon: default_epsilon(d),
            lambda_reg: 1.0,
            non_uniform_split: true,
            lr: 0.003,
            warmup_epochs: 50,
            epochs: 400,
            epoch_size: 10,
            batch_size: if d <= 2 { 12 } else { 4 },
            dataset_size: if d <= 2 { 2000 } else { 4500 },
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            precision: Dtype::F32,
        }
    }

    /// Workstation-scale configuration used throughout the test suites.
    pub fn desk_scale(d: usize) -> Self {
        PtConfig {
            emb: 64,
            layers: 3,
            heads: 2,
            epochs: 150,
            batch_size: 8,
            dataset_size: 200,
            ..Self::paper_scale(d)
        }
    }

    /// Tiny configuration for gradient checks and fast training smoke tests.
    /// The schedule is compressed: fifty warmup epochs would swallow the
    /// whole run, and 500 steps need a hotter peak rate to move.
    pub fn smoke(d: usize) -> Self {
        PtConfig { layers: 2, epochs: 50, warmup_epochs: 5, lr: 0.01, ..Self::desk_scale(d) }
    }

    pub fn with_variant(mut self, v: PtVariant) -> Self {
        self.non_uniform_split = v.non_uniform();
        if !v.regularised() {
            self.lambda_reg = 0.0;
        } else if self.lambda_reg == 0.0 {
            self.lambda_reg = 1.0;
        }
        self
    }

    pub fn variant(&self) -> PtVariant {
        match (self.non_uniform_split, self.lambda_reg > 0.0) {
            (false, false) => PtVariant::Pt,
            (false, true) => PtVariant::PtR,
            (true, false) => PtVariant::PtNu,
            (true, true) => PtVariant::PtNuR,
        }
    }

    pub fn with_precision(mut self, p: Dtype) -> Self {
        self.precision = p;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.emb / self.heads
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.epoch_size
    }

    /// Sample count used for the one-off bucket-border estimate:
    /// batch size x 10 x dataset size.
    pub fn spec_estimate_samples(&self) -> usize {
        self.batch_size * 10 * self.dataset_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(CoreError::param("input dimension must be positive"));
        }
        if self.emb == 0 || self.heads == 0 || self.emb % self.heads != 0 {
            return Err(CoreError::param(format!(
                "embedding width {} must be divisible by {} heads",
                self.emb, self.heads
            )));
        }
        if self.layers == 0 || self.n_buckets < 2 {
            return Err(CoreError::param("need at least 1 layer and 2 buckets"));
        }
        if self.epsilon < 0.0 || self.lambda_reg < 0.0 {
            return Err(CoreError::param("epsilon and lambda_reg must be non-negative"));
        }
        if self.lambda_reg > 0.0 && self.epsilon == 0.0 {
            return Err(CoreError::param(
                "regularised training requires a positive epsilon",
            ));
        }
        if self.batch_size == 0
            || self.dataset_size < 2
            || self.epochs == 0
            || self.epoch_size == 0
        {
            return Err(CoreError::param("batch, dataset size, and schedule must be positive"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(CoreError::param("invalid optimizer settings"));
        }
        Ok(())
    }
}
