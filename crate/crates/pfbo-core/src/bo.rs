//! The outer Bayesian-optimisation loop for any surrogate, plus the
//! probe-density and cross-entropy-replay diagnostics.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

use pfbo_tensor::Tensor;

use crate::acquisition::{maximize_gp, maximize_pt, AcqOptConfig};
use crate::error::{CoreError, Result};
use crate::gp::GpHyperparams;
use crate::gp_surrogate::fit;
use crate::objectives::{Objective, ObjectiveKind};
use crate::pt::PtModel;
use crate::rng::{derive_seed, rng_from};

pub use crate::gp_surrogate::GpModel;

/// Which surrogate drives the acquisition.
#[derive(Debug, Clone)]
pub enum Surrogate {
    RandomSearch,
    Gp {
        /// Restarts for the periodic from-scratch refits.
        fit_restarts: usize,
    },
    Pt {
        model: Arc<PtModel>,
        label: String,
    },
}

impl Surrogate {
    pub fn label(&self) -> String {
        match self {
            Surrogate::RandomSearch => "rs".into(),
            Surrogate::Gp { .. } => "gp".into(),
            Surrogate::Pt { label, .. } => label.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoRunConfig {
    pub objective: ObjectiveKind,
    pub d: usize,
    pub n_init: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub acq: AcqOptConfig,
    /// When false, elapsed_s is recorded as 0 so that reruns are
    /// byte-identical.
    pub record_timing: bool,
}

impl BoRunConfig {
    pub fn new(objective: ObjectiveKind, d: usize, n_init: usize, n_steps: usize, seed: u64) -> Self {
        BoRunConfig {
            objective,
            d,
            n_init,
            n_steps,
            seed,
            acq: AcqOptConfig::default_for_dim(d),
            record_timing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 || self.n_steps == 0 {
            return Err(CoreError::param("n_init and n_steps must be positive"));
        }
        self.acq.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub best_y: f64,
    pub regret: f64,
    /// Cumulative surrogate + acquisition seconds (objective time excluded).
    pub elapsed_s: f64,
}

/// Ordered record of one optimisation run.
#[derive(Debug, Clone)]
pub struct BoTrace {
    pub objective: String,
    pub d: usize,
    pub n_init: usize,
    pub n_steps: usize,
    pub surrogate: String,
    pub seed: u64,
    pub records: Vec<StepRecord>,
    /// Set when a surrogate failure truncated the run.
    pub error: Option<String>,
}

impl BoTrace {
    pub fn final_regret(&self) -> f64 {
        self.records.last().map(|r| r.regret).unwrap_or(f64::NAN)
    }

    pub fn best_y(&self) -> f64 {
        self.records.last().map(|r| r.best_y).unwrap_or(f64::NAN)
    }

    /// Equality over the deterministic fields (wall time excluded).
    pub fn deterministic_eq(&self, other: &BoTrace) -> bool {
        self.records.len() == other.records.len()
            && self
                .records
                .iter()
                .zip(other.records.iter())
                .all(|(a, b)| {
                    a.step == b.step
                        && a.x == b.x
                        && a.y.to_bits() == b.y.to_bits()
                        && a.best_y.to_bits() == b.best_y.to_bits()
                        && a.regret.to_bits() == b.regret.to_bits()
                })
    }

    /// CSV with columns step,x_0..x_{d-1},y,best_y,regret,elapsed_s.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step");
        for j in 0..self.d {
            s.push_str(&format!(",x_{}", j));
        }
        s.push_str(",y,best_y,regret,elapsed_s\n");
        for r in &self.records {
            s.push_str(&r.step.to_string());
            for v in &r.x {
                s.push_str(&format!(",{:?}", v));
            }
            s.push_str(&format!(",{:?},{:?},{:?},{:?}\n", r.y, r.best_y, r.regret, r.elapsed_s));
        }
        s
    }

    /// Parse a trace CSV produced by [`BoTrace::to_csv`]; run metadata that
    /// is not stored in the file stays at defaults.
    pub fn from_csv(text: &str) -> Result<BoTrace> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CoreError::contract("trace_from_csv", "empty file"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 5 || cols[0] != "step" {
            return Err(CoreError::contract("trace_from_csv", "unrecognized header"));
        }
        let d = cols.len() - 5;
        let mut records = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(CoreError::contract(
                    "trace_from_csv",
                    format!("row {} has {} fields, expected {}", ln + 2, f.len(), cols.len()),
                ));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| CoreError::contract("trace_from_csv", format!("bad float '{}'", s)))
            };
            records.push(StepRecord {
                step: f[0]
                    .parse::<usize>()
                    .map_err(|_| CoreError::contract("trace_from_csv", "bad step"))?,
                x: f[1..1 + d].iter().map(|s| parse(s)).collect::<Result<_>>()?,
                y: parse(f[1 + d])?,
                best_y: parse(f[2 + d])?,
                regret: parse(f[3 + d])?,
                elapsed_s: parse(f[4 + d])?,
            });
        }
        Ok(BoTrace {
            objective: String::new(),
            d,
            n_init: 0,
            n_steps: records.len(),
            surrogate: String::new(),
            seed: 0,
            records,
            error: None,
        })
    }
}

fn uniform_point(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| rng.random::<f64>()).collect()
}

/// Run one optimisation: n_init uniform points, then n_steps of surrogate
/// update, acquisition maximization, and objective evaluation. A surrogate
/// failure truncates the trace and sets the error flag.
pub fn run(cfg: &BoRunConfig, surrogate: &Surrogate) -> Result<BoTrace> {
    cfg.validate()?;
    let obj = Objective::new(cfg.objective, cfg.d)?;
    let mut trace = BoTrace {
        objective: obj.name().to_string(),
        d: cfg.d,
        n_init: cfg.n_init,
        n_steps: cfg.n_steps,
        surrogate: surrogate.label(),
        seed: cfg.seed,
        records: Vec::with_capacity(cfg.n_init + cfg.n_steps),
        error: None,
    };

    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut best = f64::INFINITY;
    let mut elapsed = 0.0f64;

    let push_record = |trace: &mut BoTrace,
                           xs: &mut Vec<Vec<f64>>,
                           ys: &mut Vec<f64>,
                           best: &mut f64,
                           x: Vec<f64>,
                           y: f64,
                           elapsed: f64| {
        *best = best.min(y);
        trace.records.push(StepRecord {
            step: trace.records.len(),
            x: x.clone(),
            y,
            best_y: *best,
            regret: obj.simple_regret(*best),
            elapsed_s: elapsed,
        });
        xs.push(x);
        ys.push(y);
    };

    let mut init_rng = rng_from(derive_seed(cfg.seed, &[0x1217]));
    for _ in 0..cfg.n_init {
        let x = uniform_point(cfg.d, &mut init_rng);
        let y = obj.evaluate(&x)?;
        push_record(&mut trace, &mut xs, &mut ys, &mut best, x, y, elapsed);
    }

    // GP surrogate state across steps
    let mut prev_theta: Option<GpHyperparams> = None;
    let mut last_full_n = 0usize;

    for t in 0..cfg.n_steps {
        let step_seed = derive_seed(cfg.seed, &[0xACC1, t as u64]);
        let started = Instant::now();
        let picked: Result<Vec<f64>> = match surrogate {
            Surrogate::RandomSearch => Ok(uniform_point(cfg.d, &mut rng_from(step_seed))),
            Surrogate::Gp { fit_restarts } => (|| {
                let n = xs.len();
                let x_obs = Tensor::new(
                    vec![n, cfg.d],
                    xs.iter().flatten().copied().collect(),
                )?;
                // full retrain from scratch each time the data grew by 10%,
                // warm-started single-restart refits in between
                let growth = (last_full_n as f64 * 0.1).ceil().max(1.0) as usize;
                let model = if last_full_n == 0 || n >= last_full_n + growth {
                    last_full_n = n;
                    fit(&x_obs, &ys, *fit_restarts, step_seed, None)?
                } else {
                    fit(&x_obs, &ys, 1, step_seed, prev_theta)?
                };
                prev_theta = Some(*model.theta());
                maximize_gp(&model, cfg.d, best, &cfg.acq, step_seed)
            })(),
            Surrogate::Pt { model, .. } => (|| {
                let n = xs.len();
                let x_obs = Tensor::new(
                    vec![n, cfg.d],
                    xs.iter().flatten().copied().collect(),
                )?;
                maximize_pt(model, &x_obs, &ys, best, &cfg.acq, t, step_seed)
            })(),
        };
        if cfg.record_timing {
            elapsed += started.elapsed().as_secs_f64();
        }
        match picked {
            Ok(x) => {
                let y = obj.evaluate(&x)?;
                push_record(&mut trace, &mut xs, &mut ys, &mut best, x, y, elapsed);
            }
            Err(e) => {
                trace.error = Some(e.to_string());
                break;
            }
        }
    }
    Ok(trace)
}

/// Histogram of probed 1-d inputs over [0, 1].
pub fn probe_density_report(trace: &BoTrace, n_bins: usize) -> Result<Vec<usize>> {
    if trace.d != 1 {
        return Err(CoreError::contract("probe_density_report", "requires a 1-d trace"));
    }
    if n_bins == 0 {
        return Err(CoreError::param("need at least one bin"));
    }
    let mut bins = vec![0usize; n_bins];
    for r in &trace.records {
        let b = ((r.x[0] * n_bins as f64) as usize).min(n_bins - 1);
        bins[b] += 1;
    }
    Ok(bins)
}

pub fn probe_density_csv(bins: &[usize]) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    let n = bins.len() as f64;
    for (i, &c) in bins.iter().enumerate() {
        s.push_str(&format!("{},{},{}\n", i as f64 / n, (i + 1) as f64 / n, c));
    }
    s
}

/// Cross-entropy replay along a reference trace: at step t each model is
/// conditioned on the initial design plus the first t acquired points and
/// scored on the remaining acquired points. Returns one CE curve per model.
pub fn ce_replay(
    model_a: &PtModel,
    model_b: &PtModel,
    reference: &BoTrace,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_init = reference.n_init;
    let n_total = reference.records.len();
    if n_init == 0 || n_total <= n_init {
        return Err(CoreError::contract(
            "ce_replay",
            "reference trace must expose its initial design and at least one acquired point",
        ));
    }
    let d = reference.d;
    for model in [model_a, model_b] {
        if model.cfg().d != d {
            return Err(CoreError::contract("ce_replay", "checkpoint dimension mismatch"));
        }
    }
    let n_acq = n_total - n_init;
    let xs: Vec<&[f64]> = reference.records.iter().map(|r| r.x.as_slice()).collect();
    let ys: Vec<f64> = reference.records.iter().map(|r| r.y).collect();

    let mut curve_a = Vec::with_capacity(n_acq);
    let mut curve_b = Vec::with_capacity(n_acq);
    for t in 0..n_acq {
        let n_obs = n_init + t;
        let obs_x = Tensor::new(vec![n_obs, d], xs[..n_obs].concat())?;
        let obs_y = &ys[..n_obs];
        let pred_x = Tensor::new(vec![n_total - n_obs, d], xs[n_obs..].concat())?;
        let pred_y = &ys[n_obs..];
        for (model, curve) in [(model_a, &mut curve_a), (model_b, &mut curve_b)] {
            let post = model.posterior(&obs_x, obs_y, &pred_x)?;
            curve.push(post.ce_loss(pred_y)?);
        }
    }
    Ok((curve_a, curve_b))
}
