//! Model checkpoints: configuration plus every tensor as little-endian
//! `f64`, so a reload reproduces inference bit-for-bit.
//!
//! ```text
//! "FTCK" | version: u32 = 1 | B, K, p, C: u32
//! α_soft, leaky slope, dropout, BN ε, BN momentum: f64
//! conv1_w conv1_b bn1_gamma bn1_beta bn1_mean bn1_var
//! conv2_w conv2_b bn2_gamma bn2_beta bn2_mean bn2_var decoder_u: f64 each
//! ```

use std::fs;
use std::path::Path;

use ftir_unmix_core::model::{ParamTensors, RunningStats};
use ftir_unmix_core::{ModelConfig, ModelParams};

use crate::cube_io::FormatError;

pub const MAGIC: &[u8; 4] = b"FTCK";
pub const VERSION: u32 = 1;

fn tensor_order(p: &ModelParams) -> [&[f64]; 13] {
    let (l, r) = (&p.learn, &p.running);
    [
        &l.conv1_w,
        &l.conv1_b,
        &l.bn1_gamma,
        &l.bn1_beta,
        &r.bn1_mean,
        &r.bn1_var,
        &l.conv2_w,
        &l.conv2_b,
        &l.bn2_gamma,
        &l.bn2_beta,
        &r.bn2_mean,
        &r.bn2_var,
        &l.decoder_u,
    ]
}

pub fn encode_checkpoint(cfg: &ModelConfig, params: &ModelParams) -> Result<Vec<u8>, FormatError> {
    params.validate(cfg)?;
    let mut out =
        Vec::with_capacity(64 + 8 * (params.learn.len() + 2 * (cfg.hidden + cfg.endmembers)));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [cfg.bands, cfg.endmembers, cfg.patch, cfg.hidden] {
        let v = u32::try_from(v).map_err(|_| FormatError::Dimension(format!("{v} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [
        cfg.alpha_soft,
        cfg.leaky_slope,
        cfg.dropout,
        cfg.bn_eps,
        cfg.bn_momentum,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in tensor_order(params) {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::Length(format!(
                "checkpoint truncated at byte {}",
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self, len: usize) -> Result<Vec<f64>, FormatError> {
        (0..len).map(|_| self.f64()).collect()
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, ModelParams), FormatError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(FormatError::Format("not a checkpoint (bad magic)".into()));
    }
    let mut c = Cursor { bytes, pos: 4 };
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(FormatError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let (bands, k, patch, hidden) = (c.u32()?, c.u32()?, c.u32()?, c.u32()?);
    let mut cfg = ModelConfig::new(bands, k);
    cfg.patch = patch;
    cfg.hidden = hidden;
    cfg.alpha_soft = c.f64()?;
    cfg.leaky_slope = c.f64()?;
    cfg.dropout = c.f64()?;
    cfg.bn_eps = c.f64()?;
    cfg.bn_momentum = c.f64()?;
    cfg.validate()?;
    let area = patch * patch;
    let mut learn = ParamTensors::zeros(&cfg);
    learn.conv1_w = c.tensor(hidden * bands * 9)?;
    learn.conv1_b = c.tensor(hidden)?;
    learn.bn1_gamma = c.tensor(hidden)?;
    learn.bn1_beta = c.tensor(hidden)?;
    let bn1_mean = c.tensor(hidden)?;
    let bn1_var = c.tensor(hidden)?;
    learn.conv2_w = c.tensor(k * hidden)?;
    learn.conv2_b = c.tensor(k)?;
    learn.bn2_gamma = c.tensor(k)?;
    learn.bn2_beta = c.tensor(k)?;
    let bn2_mean = c.tensor(k)?;
    let bn2_var = c.tensor(k)?;
    learn.decoder_u = c.tensor(bands * k * area)?;
    if c.pos != bytes.len() {
        return Err(FormatError::Length(format!(
            "{} trailing bytes after checkpoint payload",
            bytes.len() - c.pos
        )));
    }
    let params = ModelParams {
        learn,
        running: RunningStats {
            bn1_mean,
            bn1_var,
            bn2_mean,
            bn2_var,
        },
    };
    params.validate(&cfg)?;
    Ok((cfg, params))
}

pub fn save_checkpoint(
    cfg: &ModelConfig,
    params: &ModelParams,
    path: &Path,
) -> Result<(), FormatError> {
    fs::write(path, encode_checkpoint(cfg, params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams), FormatError> {
    decode_checkpoint(&fs::read(path)?)
}
