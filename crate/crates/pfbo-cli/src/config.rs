//! TOML configuration schemas for the CLI commands.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use pfbo_core::acquisition::AcqOptConfig;
use pfbo_core::gp::GpHyperparams;
use pfbo_core::lemma::LemmaConfig;
use pfbo_core::prior::HyperPrior;
use pfbo_core::pt::{PtConfig, PtVariant};
use pfbo_tensor::Dtype;

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub train: TrainSection,
    #[serde(default)]
    pub hyperprior: Option<HyperPriorSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub d: usize,
    /// Base preset the overrides apply to: desk (default), paper, or smoke.
    #[serde(default)]
    pub scale: Option<String>,
    #[serde(default)]
    pub variant: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub emb: Option<usize>,
    #[serde(default)]
    pub layers: Option<usize>,
    #[serde(default)]
    pub heads: Option<usize>,
    #[serde(default)]
    pub n_buckets: Option<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub lambda_reg: Option<f64>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub warmup_epochs: Option<usize>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub epoch_size: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub dataset_size: Option<usize>,
    #[serde(default)]
    pub weight_decay: Option<f64>,
    #[serde(default)]
    pub precision: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperPriorSection {
    pub lengthscale: [f64; 2],
    pub outputscale: [f64; 2],
    pub noise: [f64; 2],
}

pub struct ResolvedTrain {
    pub cfg: PtConfig,
    pub hyperprior: HyperPrior,
    pub seed: u64,
    pub variant: PtVariant,
}

/// Resolve a training config file plus an optional command-line variant
/// override into a validated configuration.
pub fn load_train(path: &Path, variant_flag: Option<&str>) -> Result<ResolvedTrain> {
    let file: TrainFile = parse_toml(path)?;
    let t = &file.train;
    let mut cfg = match t.scale.as_deref().unwrap_or("desk") {
        "desk" => PtConfig::desk_scale(t.d),
        "paper" => PtConfig::paper_scale(t.d),
        "smoke" => PtConfig::smoke(t.d),
        other => bail!("train.scale must be desk|paper|smoke, got '{}'", other),
    };
    // epsilon given explicitly in the file must survive variant application
    let explicit_epsilon = t.epsilon;
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = t.$field {
                cfg.$field = v;
            }
        };
    }
    take!(emb);
    take!(layers);
    take!(heads);
    take!(n_buckets);
    take!(lambda_reg);
    take!(lr);
    take!(warmup_epochs);
    take!(epochs);
    take!(epoch_size);
    take!(batch_size);
    take!(dataset_size);
    take!(weight_decay);
    if let Some(p) = &t.precision {
        cfg.precision = match p.as_str() {
            "f32" => Dtype::F32,
            "f64" => Dtype::F64,
            other => bail!("train.precision must be f32|f64, got '{}'", other),
        };
    }
    let variant_name = variant_flag.or(t.variant.as_deref()).unwrap_or("pt-nur");
    let variant = PtVariant::parse(variant_name)?;
    cfg = cfg.with_variant(variant);
    if let Some(e) = explicit_epsilon {
        cfg.epsilon = e;
    }
    if variant.regularised() && cfg.epsilon <= 0.0 {
        bail!("variant '{}' is regularised but epsilon is missing or zero", variant.name());
    }
    let hyperprior = match &file.hyperprior {
        Some(h) => HyperPrior {
            lengthscale: (h.lengthscale[0], h.lengthscale[1]),
            outputscale: (h.outputscale[0], h.outputscale[1]),
            noise: (h.noise[0], h.noise[1]),
        },
        None => HyperPrior::default_for_dim(t.d),
    };
    cfg.validate()?;
    hyperprior.validate()?;
    Ok(ResolvedTrain { cfg, hyperprior, seed: t.seed.unwrap_or(0), variant })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixFile {
    pub matrix: MatrixSection,
    #[serde(default)]
    pub acq: Option<AcqSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSection {
    pub objectives: Vec<String>,
    pub d: usize,
    /// Surrogate kinds: "rs", "gp", or "pt:<checkpoint path>[:label]".
    pub kinds: Vec<String>,
    pub seeds: Vec<u64>,
    pub n_init: usize,
    pub n_steps: usize,
    #[serde(default)]
    pub record_timing: Option<bool>,
    #[serde(default)]
    pub gp_fit_restarts: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AcqSection {
    #[serde(default)]
    pub local_test_points: Option<usize>,
    #[serde(default)]
    pub initial_perturbation: Option<f64>,
    #[serde(default)]
    pub perturbation_decay: Option<f64>,
    #[serde(default)]
    pub gp_restarts: Option<usize>,
    #[serde(default)]
    pub gp_raw_samples: Option<usize>,
    #[serde(default)]
    pub local_mix: Option<f64>,
}

pub fn load_matrix(path: &Path) -> Result<MatrixFile> {
    let file: MatrixFile = parse_toml(path)?;
    if file.matrix.objectives.is_empty() || file.matrix.kinds.is_empty() || file.matrix.seeds.is_empty()
    {
        bail!("matrix must list at least one objective, kind, and seed");
    }
    Ok(file)
}

pub fn resolve_acq(d: usize, section: &Option<AcqSection>) -> AcqOptConfig {
    let mut acq = AcqOptConfig::default_for_dim(d);
    if let Some(s) = section {
        if let Some(v) = s.local_test_points {
            acq.local_test_points = v;
        }
        if let Some(v) = s.initial_perturbation {
            acq.initial_perturbation = v;
        }
        if let Some(v) = s.perturbation_decay {
            acq.perturbation_decay = v;
        }
        if let Some(v) = s.gp_restarts {
            acq.gp_restarts = v;
        }
        if let Some(v) = s.gp_raw_samples {
            acq.gp_raw_samples = v;
        }
        if let Some(v) = s.local_mix {
            acq.local_mix = v;
        }
    }
    acq
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaFile {
    pub lemma: LemmaSection,
    pub theta: ThetaSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaSection {
    pub d: usize,
    pub n_obs: usize,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub eta: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaSection {
    pub lengthscale: f64,
    pub outputscale: f64,
    pub noise: f64,
}

pub fn load_lemma(path: &Path) -> Result<LemmaConfig> {
    let file: LemmaFile = parse_toml(path)?;
    let theta = GpHyperparams {
        lengthscale: file.theta.lengthscale,
        outputscale: file.theta.outputscale,
        noise: file.theta.noise,
    };
    let mut cfg = LemmaConfig::default_with(
        theta,
        file.lemma.d,
        file.lemma.n_obs,
        file.lemma.seed.unwrap_or(0),
    );
    if let Some(t) = file.lemma.trials {
        cfg.trials = t;
    }
    if let Some(grid) = file.lemma.eta {
        cfg.eta_grid = grid;
    }
    cfg.validate()?;
    Ok(cfg)
}
