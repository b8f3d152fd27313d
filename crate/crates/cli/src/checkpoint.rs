//! Binary model checkpoints.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic          8 bytes   "ASVCKPT1"
//! version        u32       1
//! sample_rate    u32
//! win_length     u64
//! hop_length     u64
//! n_fft          u64
//! n_mels         u64
//! log_floor      f64
//! hidden_dim     u64
//! embedding_dim  u64
//! pooling        u8        0 = mean, 1 = sap, 2 = asp
//! n_tensors      u32
//! n_tensors times:
//!   name_len     u32
//!   name         name_len bytes of UTF-8
//!   ndim         u32
//!   dims         ndim × u64
//!   data         prod(dims) × f64, row-major
//! ```
//!
//! Tensors are stored in the model's parameter order; a reader matches them
//! by name and rejects missing, extra or misshapen tensors.

use std::path::Path;

use asv_vote_core::autodiff::Tensor;
use asv_vote_core::features::FeatureConfig;
use asv_vote_core::model::{AsvModel, ModelConfig, PoolingKind, PARAM_NAMES};

use crate::error::{io_err, CliError, Result};

pub const MAGIC: &[u8; 8] = b"ASVCKPT1";
pub const VERSION: u32 = 1;

fn pooling_code(p: PoolingKind) -> u8 {
    match p {
        PoolingKind::Mean => 0,
        PoolingKind::Sap => 1,
        PoolingKind::Asp => 2,
    }
}

fn pooling_from_code(c: u8) -> Option<PoolingKind> {
    match c {
        0 => Some(PoolingKind::Mean),
        1 => Some(PoolingKind::Sap),
        2 => Some(PoolingKind::Asp),
        _ => None,
    }
}

pub fn encode(model: &AsvModel) -> Vec<u8> {
    let mut out = Vec::new();
    let cfg = model.config();
    let f = &cfg.features;
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&f.sample_rate.to_le_bytes());
    for v in [f.win_length, f.hop_length, f.n_fft, f.n_mels] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&f.log_floor.to_le_bytes());
    out.extend_from_slice(&(cfg.hidden_dim as u64).to_le_bytes());
    out.extend_from_slice(&(cfg.embedding_dim as u64).to_le_bytes());
    out.push(pooling_code(cfg.pooling));
    let named: Vec<_> = model.named_params().collect();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> std::result::Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|_| "dimension overflows usize".to_string())
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parse a checkpoint; the error message says what is wrong with it.
pub fn decode(bytes: &[u8]) -> std::result::Result<AsvModel, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let features = FeatureConfig {
        sample_rate: r.u32()?,
        win_length: r.usize()?,
        hop_length: r.usize()?,
        n_fft: r.usize()?,
        n_mels: r.usize()?,
        log_floor: r.f64()?,
    };
    let hidden_dim = r.usize()?;
    let embedding_dim = r.usize()?;
    let code = r.u8()?;
    let pooling = pooling_from_code(code).ok_or_else(|| format!("unknown pooling code {code}"))?;
    let n = r.u32()? as usize;
    if n != PARAM_NAMES.len() {
        return Err(format!("expected {} tensors, found {n}", PARAM_NAMES.len()));
    }
    let mut slots: Vec<Option<Tensor>> = vec![None; n];
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| "tensor name is not UTF-8".to_string())?;
        let idx = PARAM_NAMES
            .iter()
            .position(|p| *p == name)
            .ok_or_else(|| format!("unknown tensor {name:?}"))?;
        if slots[idx].is_some() {
            return Err(format!("duplicate tensor {name:?}"));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.usize()).collect::<std::result::Result<Vec<_>, _>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| format!("tensor {name:?} is too large"))?;
        if numel.saturating_mul(8) > bytes.len() - r.pos {
            return Err(format!("truncated data for tensor {name:?}"));
        }
        let data = (0..numel).map(|_| r.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
        slots[idx] = Some(Tensor::new(shape, data).map_err(|e| e.to_string())?);
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let params = slots.into_iter().map(|t| t.expect("every slot filled")).collect();
    let config = ModelConfig {
        features,
        hidden_dim,
        embedding_dim,
        pooling,
    };
    AsvModel::from_parts(config, params).map_err(|e| e.to_string())
}

pub fn save(model: &AsvModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(io_err("save checkpoint", path))
}

pub fn load(path: &Path) -> Result<AsvModel> {
    if !path.exists() {
        return Err(CliError::MissingInput {
            stage: "load checkpoint",
            path: path.to_path_buf(),
        });
    }
    let bytes = std::fs::read(path).map_err(io_err("load checkpoint", path))?;
    decode(&bytes).map_err(|msg| CliError::Checkpoint {
        path: path.to_path_buf(),
        msg,
    })
}
