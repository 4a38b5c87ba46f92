//! Versioned binary checkpoint format.
//!
//! Layout: magic "PFBO", u32 version, a length-prefixed UTF-8 key=value
//! config block, then named tensors (u16 name length, name, dtype tag, rank,
//! u32 extents, little-endian payload). Floats in the config block print via
//! Rust's shortest round-trip formatting, so save/load is bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use pfbo_tensor::{Dtype, Real, Tensor};

use crate::error::{CoreError, Result};
use crate::prior::HyperPrior;
use crate::pt::config::PtConfig;
use crate::pt::model::{PtNet, PtParams};
use crate::pt::PtModel;
use crate::riemann::RiemannSpec;

const MAGIC: [u8; 4] = *b"PFBO";
const VERSION: u32 = 1;
const BORDERS_TENSOR: &str = "riemann/borders";

fn config_block(cfg: &PtConfig, hp: &HyperPrior, seed: u64) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push('=');
        s.push_str(&v);
        s.push('\n');
    };
    kv("format_version", VERSION.to_string());
    kv("d", cfg.d.to_string());
    kv("emb", cfg.emb.to_string());
    kv("layers", cfg.layers.to_string());
    kv("heads", cfg.heads.to_string());
    kv("n_buckets", cfg.n_buckets.to_string());
    kv("epsilon", format!("{:?}", cfg.epsilon));
    kv("lambda_reg", format!("{:?}", cfg.lambda_reg));
    kv("non_uniform_split", cfg.non_uniform_split.to_string());
    kv("lr", format!("{:?}", cfg.lr));
    kv("warmup_epochs", cfg.warmup_epochs.to_string());
    kv("epochs", cfg.epochs.to_string());
    kv("epoch_size", cfg.epoch_size.to_string());
    kv("batch_size", cfg.batch_size.to_string());
    kv("dataset_size", cfg.dataset_size.to_string());
    kv("weight_decay", format!("{:?}", cfg.weight_decay));
    kv("beta1", format!("{:?}", cfg.beta1));
    kv("beta2", format!("{:?}", cfg.beta2));
    kv("precision", match cfg.precision {
        Dtype::F32 => "f32".into(),
        Dtype::F64 => "f64".into(),
    });
    kv("hyperprior_lengthscale", format!("{:?} {:?}", hp.lengthscale.0, hp.lengthscale.1));
    kv("hyperprior_outputscale", format!("{:?} {:?}", hp.outputscale.0, hp.outputscale.1));
    kv("hyperprior_noise", format!("{:?} {:?}", hp.noise.0, hp.noise.1));
    kv("train_seed", seed.to_string());
    s
}

fn parse_config(text: &str) -> Result<(PtConfig, HyperPrior, u64)> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CoreError::Checkpoint(format!("config line {} malformed", lineno + 1)))?;
        map.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<&String> {
        map.get(k).ok_or_else(|| CoreError::Checkpoint(format!("config key '{}' missing", k)))
    };
    fn num<T: std::str::FromStr>(v: &str, k: &str) -> Result<T> {
        v.parse::<T>()
            .map_err(|_| CoreError::Checkpoint(format!("config key '{}' unparseable: {}", k, v)))
    }
    fn pair(v: &str, k: &str) -> Result<(f64, f64)> {
        let mut it = v.split_whitespace();
        let a = num::<f64>(it.next().unwrap_or(""), k)?;
        let b = num::<f64>(it.next().unwrap_or(""), k)?;
        Ok((a, b))
    }
    let precision = match get("precision")?.as_str() {
        "f32" => Dtype::F32,
        "f64" => Dtype::F64,
        other => return Err(CoreError::Checkpoint(format!("unknown precision '{}'", other))),
    };
    let cfg = PtConfig {
        d: num(get("d")?, "d")?,
        emb: num(get("emb")?, "emb")?,
        layers: num(get("layers")?, "layers")?,
        heads: num(get("heads")?, "heads")?,
        n_buckets: num(get("n_buckets")?, "n_buckets")?,
        epsilon: num(get("epsilon")?, "epsilon")?,
        lambda_reg: num(get("lambda_reg")?, "lambda_reg")?,
        non_uniform_split: num(get("non_uniform_split")?, "non_uniform_split")?,
        lr: num(get("lr")?, "lr")?,
        warmup_epochs: num(get("warmup_epochs")?, "warmup_epochs")?,
        epochs: num(get("epochs")?, "epochs")?,
        epoch_size: num(get("epoch_size")?, "epoch_size")?,
        batch_size: num(get("batch_size")?, "batch_size")?,
        dataset_size: num(get("dataset_size")?, "dataset_size")?,
        weight_decay: num(get("weight_decay")?, "weight_decay")?,
        beta1: num(get("beta1")?, "beta1")?,
        beta2: num(get("beta2")?, "beta2")?,
        precision,
    };
    let hp = HyperPrior {
        lengthscale: pair(get("hyperprior_lengthscale")?, "hyperprior_lengthscale")?,
        outputscale: pair(get("hyperprior_outputscale")?, "hyperprior_outputscale")?,
        noise: pair(get("hyperprior_noise")?, "hyperprior_noise")?,
    };
    let seed: u64 = num(get("train_seed")?, "train_seed")?;
    Ok((cfg, hp, seed))
}

fn write_tensor<T: Real>(w: &mut impl Write, name: &str, t: &Tensor<T>) -> Result<()> {
    let name_bytes = name.as_bytes();
    w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
    w.write_all(name_bytes)?;
    w.write_all(&[T::DTYPE.tag()])?;
    w.write_all(&[t.rank() as u8])?;
    for &e in t.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    match T::DTYPE {
        Dtype::F32 => {
            for &v in t.data() {
                w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
        }
        Dtype::F64 => {
            for &v in t.data() {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
    }
    Ok(())
}

struct RawTensor {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
    f32_data: Vec<f32>,
    f64_data: Vec<f64>,
}

fn read_tensor(r: &mut impl Read) -> Result<RawTensor> {
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let name_len = u16::from_le_bytes(b2) as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| CoreError::Checkpoint("tensor name is not UTF-8".into()))?;
    let mut b1 = [0u8; 1];
    r.read_exact(&mut b1)?;
    let dtype = Dtype::from_tag(b1[0])
        .ok_or_else(|| CoreError::Checkpoint(format!("unknown dtype tag {}", b1[0])))?;
    r.read_exact(&mut b1)?;
    let rank = b1[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut b4 = [0u8; 4];
    for _ in 0..rank {
        r.read_exact(&mut b4)?;
        shape.push(u32::from_le_bytes(b4) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut out = RawTensor {
        name,
        dtype,
        shape,
        f32_data: Vec::new(),
        f64_data: Vec::new(),
    };
    match dtype {
        Dtype::F32 => {
            out.f32_data.reserve(numel);
            for _ in 0..numel {
                r.read_exact(&mut b4)?;
                out.f32_data.push(f32::from_le_bytes(b4));
            }
        }
        Dtype::F64 => {
            let mut b8 = [0u8; 8];
            out.f64_data.reserve(numel);
            for _ in 0..numel {
                r.read_exact(&mut b8)?;
                out.f64_data.push(f64::from_le_bytes(b8));
            }
        }
    }
    Ok(out)
}

fn write_model<T: Real>(net: &PtNet<T>, w: &mut impl Write) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg_text = config_block(&net.cfg, &net.hyperprior, net.train_seed);
    w.write_all(&(cfg_text.len() as u32).to_le_bytes())?;
    w.write_all(cfg_text.as_bytes())?;

    let named = net.params.named();
    w.write_all(&(1 + named.len() as u32).to_le_bytes())?;
    let borders = Tensor::<f64>::from_f64_slice(
        &[net.spec_z.borders().len()],
        net.spec_z.borders(),
    )?;
    write_tensor(w, BORDERS_TENSOR, &borders)?;
    for (name, t) in named {
        write_tensor(w, &name, t)?;
    }
    Ok(())
}

pub fn write_to(model: &PtModel, w: &mut impl Write) -> Result<()> {
    match model {
        PtModel::F32(n) => write_model(n, w),
        PtModel::F64(n) => write_model(n, w),
    }
}

fn fill_params<T: Real>(
    cfg: &PtConfig,
    tensors: &[RawTensor],
    take: impl Fn(&RawTensor) -> Result<Tensor<T>>,
) -> Result<PtParams<T>> {
    // template gives the expected names and shapes
    let mut params = PtParams::<T>::init(cfg, 0);
    let expected: Vec<(String, Vec<usize>)> =
        params.named().iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
    if tensors.len() != expected.len() {
        return Err(CoreError::Checkpoint(format!(
            "expected {} parameter tensors, found {}",
            expected.len(),
            tensors.len()
        )));
    }
    for (raw, ((name, shape), (_, slot))) in
        tensors.iter().zip(expected.iter().zip(params.named_mut()))
    {
        if raw.name != *name {
            return Err(CoreError::Checkpoint(format!(
                "tensor '{}' out of order, expected '{}'",
                raw.name, name
            )));
        }
        if raw.shape != *shape {
            return Err(CoreError::Checkpoint(format!(
                "tensor '{}' has shape {:?}, config implies {:?}",
                raw.name, raw.shape, shape
            )));
        }
        *slot = take(raw)?;
    }
    Ok(params)
}

pub fn read_from(r: &mut impl Read) -> Result<PtModel> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head)?;
    if head[0..4] != MAGIC {
        return Err(CoreError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CoreError::Checkpoint(format!("unsupported version {}", version)));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let cfg_len = u32::from_le_bytes(b4) as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes)?;
    let cfg_text = String::from_utf8(cfg_bytes)
        .map_err(|_| CoreError::Checkpoint("config block is not UTF-8".into()))?;
    let (cfg, hp, seed) = parse_config(&cfg_text)?;
    cfg.validate().map_err(|e| CoreError::Checkpoint(format!("invalid config: {}", e)))?;

    r.read_exact(&mut b4)?;
    let n_tensors = u32::from_le_bytes(b4) as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        tensors.push(read_tensor(r)?);
    }
    if tensors.is_empty() || tensors[0].name != BORDERS_TENSOR {
        return Err(CoreError::Checkpoint("first tensor must be the bucket borders".into()));
    }
    let borders = &tensors[0];
    if borders.dtype != Dtype::F64 || borders.shape.len() != 1 {
        return Err(CoreError::Checkpoint("borders must be a rank-1 f64 tensor".into()));
    }
    if borders.shape[0] != cfg.n_buckets + 1 {
        return Err(CoreError::Checkpoint(format!(
            "{} borders but config wants {} buckets",
            borders.shape[0],
            cfg.n_buckets
        )));
    }
    let spec = Arc::new(RiemannSpec::from_borders(borders.f64_data.clone())?);

    let params_raw = &tensors[1..];
    match cfg.precision {
        Dtype::F32 => {
            let params = fill_params::<f32>(&cfg, params_raw, |raw| {
                if raw.dtype != Dtype::F32 {
                    return Err(CoreError::Checkpoint(format!(
                        "tensor '{}' dtype does not match config precision",
                        raw.name
                    )));
                }
                Ok(Tensor::new(raw.shape.clone(), raw.f32_data.clone())?)
            })?;
            Ok(PtModel::F32(PtNet::new(cfg, params, spec, hp, seed)?))
        }
        Dtype::F64 => {
            let params = fill_params::<f64>(&cfg, params_raw, |raw| {
                if raw.dtype != Dtype::F64 {
                    return Err(CoreError::Checkpoint(format!(
                        "tensor '{}' dtype does not match config precision",
                        raw.name
                    )));
                }
                Ok(Tensor::new(raw.shape.clone(), raw.f64_data.clone())?)
            })?;
            Ok(PtModel::F64(PtNet::new(cfg, params, spec, hp, seed)?))
        }
    }
}

pub fn save(model: &PtModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<PtModel> {
    let mut r = BufReader::new(File::open(path)?);
    read_from(&mut r)
}
