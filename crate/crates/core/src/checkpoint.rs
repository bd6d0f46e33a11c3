//! SAE parameter checkpoints (`SAEPAR01`).
//!
//! ```text
//! magic "SAEPAR01" | version u32
//! d u32 | ε u32 | ω u32 | activation u32 (0 relu, 1 topk, 2 batchtopk)
//! k u32 (0 for relu) | λ f64 | unit-norm u32 (0/1)
//! group count u32 | groups u32 × count
//! w_enc f32 × d·ω | w_dec f32 × ω·d | bias f32 × d | γ f32 × ω
//! ```
//!
//! Everything is little-endian; `γ` entries may be `+∞`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Activation, SaeConfig, SaeParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SAEPAR01";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &SaeParams<f32>, config: &SaeConfig) -> Result<Vec<u8>> {
    config.validate()?;
    params.check_shapes(config)?;
    if let Some((r, c)) = params
        .w_enc
        .find_non_finite()
        .or_else(|| params.w_dec.find_non_finite())
    {
        return Err(Error::Data(format!("non-finite weight at ({r}, {c})")));
    }
    if params.bias.iter().any(|x| !x.is_finite())
        || params.thresholds.iter().any(|x| x.is_nan() || *x < 0.0)
    {
        return Err(Error::Data("invalid bias or threshold values".into()));
    }

    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, x: usize| out.extend_from_slice(&(x as u32).to_le_bytes());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    u32le(&mut out, CHECKPOINT_VERSION as usize);
    u32le(&mut out, config.input_dim);
    u32le(&mut out, config.expansion_factor);
    u32le(&mut out, config.width());
    let (kind, k) = match config.activation {
        Activation::ReluL1 { .. } => (0, 0),
        Activation::TopK { k } => (1, k),
        Activation::BatchTopK { k } => (2, k),
    };
    u32le(&mut out, kind);
    u32le(&mut out, k);
    out.extend_from_slice(&config.activation.lambda().to_le_bytes());
    u32le(&mut out, config.unit_norm_decoder as usize);
    let groups = config.matryoshka_groups.clone().unwrap_or_default();
    u32le(&mut out, groups.len());
    for g in groups {
        u32le(&mut out, g);
    }
    for block in [
        params.w_enc.as_slice(),
        params.w_dec.as_slice(),
        &params.bias,
        &params.thresholds,
    ] {
        for x in block {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corrupt {
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(SaeParams<f32>, SaeConfig)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(8).map_err(|_| Error::Format("checkpoint shorter than its magic".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}, expected \"SAEPAR01\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let d = cur.u32()?;
    let eps = cur.u32()?;
    let width = cur.u32()?;
    let kind = cur.u32()?;
    let k = cur.u32()?;
    let lambda = cur.f64()?;
    let unit_norm = match cur.u32()? {
        0 => false,
        1 => true,
        x => return Err(Error::Format(format!("bad unit-norm flag {x}"))),
    };
    let n_groups = cur.u32()?;
    if n_groups > width {
        return Err(Error::Format(format!("{n_groups} groups for width {width}")));
    }
    let groups = (0..n_groups).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
    let activation = match kind {
        0 => Activation::ReluL1 { lambda },
        1 => Activation::TopK { k },
        2 => Activation::BatchTopK { k },
        x => return Err(Error::Format(format!("unknown activation kind {x}"))),
    };
    let config = SaeConfig {
        input_dim: d,
        expansion_factor: eps,
        activation,
        matryoshka_groups: (!groups.is_empty()).then_some(groups),
        unit_norm_decoder: unit_norm,
    };
    if config.width() != width {
        return Err(Error::Format(format!("width {width} != d·ε = {}", d * eps)));
    }
    config.validate().map_err(|e| Error::Format(e.to_string()))?;

    let expected = cur.pos + 4 * (2 * d * width + d + width);
    if bytes.len() != expected {
        return Err(Error::Corrupt {
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    let params = SaeParams {
        w_enc: Matrix::from_vec(d, width, cur.f32s(d * width)?)?,
        w_dec: Matrix::from_vec(width, d, cur.f32s(d * width)?)?,
        bias: cur.f32s(d)?,
        thresholds: cur.f32s(width)?,
    };
    if params.w_enc.find_non_finite().is_some()
        || params.w_dec.find_non_finite().is_some()
        || params.bias.iter().any(|x| !x.is_finite())
        || params.thresholds.iter().any(|x| x.is_nan())
    {
        return Err(Error::Data("checkpoint holds non-finite parameters".into()));
    }
    Ok((params, config))
}

pub fn write_checkpoint(path: impl AsRef<Path>, params: &SaeParams<f32>, config: &SaeConfig) -> Result<()> {
    let bytes = encode_checkpoint(params, config)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(SaeParams<f32>, SaeConfig)> {
    decode_checkpoint(&std::fs::read(path)?)
}
