//! Dataset prior: synthetic regression sets drawn from a hyper-GP, plus the
//! uniform and target-weighted observation/prediction splits.

use std::io::{Read, Write};

use rand::Rng;

use pfbo_tensor::Tensor;

use crate::error::{CoreError, Result};
use crate::gp::{sample_prior, GpHyperparams};
use crate::rng::{derive_seed, rng_from};

/// Log-uniform ranges for the kernel hyperparameters sampled per dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPrior {
    pub lengthscale: (f64, f64),
    pub outputscale: (f64, f64),
    pub noise: (f64, f64),
}

impl HyperPrior {
    /// Default ranges, scaled so lengthscales stay comparable across input
    /// dimensions: lengthscale in [0.05, 1.0]*sqrt(d), outputscale in
    /// [0.25, 4.0], noise variance in [1e-4, 1e-2].
    pub fn default_for_dim(d: usize) -> Self {
        let s = (d as f64).sqrt();
        HyperPrior {
            lengthscale: (0.05 * s, 1.0 * s),
            outputscale: (0.25, 4.0),
            noise: (1e-4, 1e-2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("lengthscale", self.lengthscale),
            ("outputscale", self.outputscale),
            ("noise", self.noise),
        ] {
            if !(0.0 < lo && lo <= hi) {
                return Err(CoreError::param(format!(
                    "hyper-prior range for {} must satisfy 0 < lo <= hi, got [{}, {}]",
                    name, lo, hi
                )));
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> GpHyperparams {
        let draw = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| -> f64 {
            if lo == hi {
                return lo;
            }
            let u: f64 = rng.random();
            (lo.ln() + u * (hi.ln() - lo.ln())).exp()
        };
        GpHyperparams {
            lengthscale: draw(rng, self.lengthscale),
            outputscale: draw(rng, self.outputscale),
            noise: draw(rng, self.noise),
        }
    }
}

/// One synthetic regression set: inputs on the unit cube, GP-sampled targets,
/// and (after splitting) a partition into observed and to-be-predicted points.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub x: Tensor<f64>,
    pub y: Vec<f64>,
    pub obs_index: Vec<usize>,
    pub pred_index: Vec<usize>,
    pub theta: GpHyperparams,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn is_split(&self) -> bool {
        !self.obs_index.is_empty() || !self.pred_index.is_empty()
    }

    /// Gathered observation inputs as an [n_obs, d] tensor.
    pub fn obs_x(&self) -> Tensor<f64> {
        gather_rows(&self.x, &self.obs_index)
    }

    pub fn pred_x(&self) -> Tensor<f64> {
        gather_rows(&self.x, &self.pred_index)
    }

    pub fn obs_y(&self) -> Vec<f64> {
        self.obs_index.iter().map(|&i| self.y[i]).collect()
    }

    pub fn pred_y(&self) -> Vec<f64> {
        self.pred_index.iter().map(|&i| self.y[i]).collect()
    }

    fn check_split(&self, obs: &[usize], pred: &[usize]) -> Result<()> {
        let n = self.len();
        let mut seen = vec![false; n];
        for &i in obs.iter().chain(pred.iter()) {
            if i >= n || seen[i] {
                return Err(CoreError::contract("split", "indices must partition the dataset"));
            }
            seen[i] = true;
        }
        if obs.is_empty() || pred.is_empty() || obs.len() + pred.len() != n {
            return Err(CoreError::contract(
                "split",
                "both sides must be non-empty and cover the dataset",
            ));
        }
        Ok(())
    }
}

pub fn gather_rows(x: &Tensor<f64>, idx: &[usize]) -> Tensor<f64> {
    let d = x.shape()[1];
    let mut out = Tensor::zeros(&[idx.len(), d]);
    for (r, &i) in idx.iter().enumerate() {
        out.data_mut()[r * d..(r + 1) * d].copy_from_slice(x.row(i));
    }
    out
}

/// Draw one unsplit dataset: N inputs uniform on [0,1]^d, kernel parameters
/// from the hyper-prior, targets from that GP's prior. Deterministic per seed.
pub fn sample_dataset(d: usize, n: usize, hp: &HyperPrior, seed: u64) -> Result<SyntheticDataset> {
    if n < 2 {
        return Err(CoreError::contract("sample_dataset", "need N >= 2"));
    }
    hp.validate()?;
    let mut rng = rng_from(derive_seed(seed, &[1]));
    let theta = hp.sample(&mut rng);
    let x = Tensor::from_fn(&[n, d], |_| rng.random::<f64>());
    let y = sample_prior(&x, &theta, derive_seed(seed, &[2]))?;
    Ok(SyntheticDataset { x, y, obs_index: Vec::new(), pred_index: Vec::new(), theta })
}

/// Uniformly random partition. With `ratio` set, n_obs = round(ratio * N)
/// clamped into [1, N-1]; otherwise n_obs is drawn uniformly from [1, N-1].
pub fn split_uniform(ds: &SyntheticDataset, ratio: Option<f64>, seed: u64) -> Result<SyntheticDataset> {
    let n = ds.len();
    if n < 2 {
        return Err(CoreError::contract("split_uniform", "need N >= 2"));
    }
    if let Some(r) = ratio {
        if !(r > 0.0 && r < 1.0) {
            return Err(CoreError::param(format!("ratio must lie in (0,1), got {}", r)));
        }
    }
    let mut rng = rng_from(seed);
    let n_obs = match ratio {
        Some(r) => ((r * n as f64).round() as usize).clamp(1, n - 1),
        None => rng.random_range(1..n),
    };
    let mut idx: Vec<usize> = (0..n).collect();
    // partial Fisher-Yates: the first n_obs entries become the obs set
    for i in 0..n_obs {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut obs = idx[..n_obs].to_vec();
    let mut pred = idx[n_obs..].to_vec();
    obs.sort_unstable();
    pred.sort_unstable();
    let out = SyntheticDataset { obs_index: obs, pred_index: pred, ..ds.clone() };
    out.check_split(&out.obs_index, &out.pred_index)?;
    Ok(out)
}

/// Target-weighted split: observation points are drawn without replacement
/// with probability proportional to softmax(y) until n_obs are taken, so
/// prediction targets skew toward low values. Constant targets reduce to the
/// uniform split.
pub fn split_softmax(ds: &SyntheticDataset, n_obs: usize, seed: u64) -> Result<SyntheticDataset> {
    let n = ds.len();
    if n < 2 || n_obs == 0 || n_obs >= n {
        return Err(CoreError::contract(
            "split_softmax",
            format!("need 1 <= n_obs < N, got n_obs={} N={}", n_obs, n),
        ));
    }
    let y_max = ds.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = ds.y.iter().map(|&v| (v - y_max).exp()).collect();
    let mut rng = rng_from(seed);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut obs = Vec::with_capacity(n_obs);
    for _ in 0..n_obs {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let mut u: f64 = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (slot, &i) in remaining.iter().enumerate() {
            u -= weights[i];
            if u <= 0.0 {
                pick = slot;
                break;
            }
        }
        let chosen = remaining.swap_remove(pick);
        weights[chosen] = 0.0;
        obs.push(chosen);
    }
    let mut pred = remaining;
    obs.sort_unstable();
    pred.sort_unstable();
    let out = SyntheticDataset { obs_index: obs, pred_index: pred, ..ds.clone() };
    out.check_split(&out.obs_index, &out.pred_index)?;
    Ok(out)
}

const DUMP_MAGIC: [u8; 4] = *b"PFDS";
const DUMP_VERSION: u32 = 1;

/// Columnar dump of a split dataset: 16-byte header (magic, version, N, d),
/// then d input columns, the target column, and a 0/1 observation flag
/// column, all little-endian f64.
pub fn write_dataset(ds: &SyntheticDataset, w: &mut impl Write) -> Result<()> {
    let n = ds.len();
    let d = ds.dim();
    w.write_all(&DUMP_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    for j in 0..d {
        for i in 0..n {
            w.write_all(&ds.x.row(i)[j].to_le_bytes())?;
        }
    }
    for &v in &ds.y {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut flag = vec![0.0f64; n];
    for &i in &ds.obs_index {
        flag[i] = 1.0;
    }
    for v in flag {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dataset(r: &mut impl Read) -> Result<SyntheticDataset> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    if head[0..4] != DUMP_MAGIC {
        return Err(CoreError::Checkpoint("bad dataset magic".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != DUMP_VERSION {
        return Err(CoreError::Checkpoint(format!("unsupported dataset version {}", version)));
    }
    let n = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    let mut col = vec![0u8; 8];
    let mut read_f64 = |r: &mut dyn Read| -> Result<f64> {
        r.read_exact(&mut col)?;
        Ok(f64::from_le_bytes(col[..].try_into().unwrap()))
    };
    let mut x = Tensor::zeros(&[n, d]);
    for j in 0..d {
        for i in 0..n {
            x.data_mut()[i * d + j] = read_f64(r)?;
        }
    }
    let y: Vec<f64> = (0..n).map(|_| read_f64(r)).collect::<Result<_>>()?;
    let mut obs = Vec::new();
    let mut pred = Vec::new();
    for i in 0..n {
        if read_f64(r)? != 0.0 {
            obs.push(i);
        } else {
            pred.push(i);
        }
    }
    Ok(SyntheticDataset {
        x,
        y,
        obs_index: obs,
        pred_index: pred,
        theta: GpHyperparams { lengthscale: 1.0, outputscale: 1.0, noise: 0.0 },
    })
}
