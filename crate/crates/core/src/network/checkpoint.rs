//! Versioned binary checkpoint.
//!
//! Layout (little-endian): magic `PPCC`, `u32` version, `u8` model kind
//! (0 compression, 1 upsampler), `u32` K, k, d and group size, the three
//! width lists (`u32` count + `u32` entries), `u32` tensor count, then per
//! tensor a `u16`-length UTF-8 name, `u8` rank, `u32` dims and `f32` data.
//! A trailing `u8` flag announces an optional coding-table section
//! (`u32` byte length + table bytes).

use std::path::Path;

use super::{ModelConfig, ModelKind, ModelParams, NetworkError, Result};
use crate::bytes::ByteReader;
use crate::entropy::CodingTables;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PPCC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub tables: Option<CodingTables>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_list(out: &mut Vec<u8>, values: &[usize]) {
    put_u32(out, values.len());
    for &v in values {
        put_u32(out, v);
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let cfg = &ckpt.config;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(match cfg.kind {
        ModelKind::Compression => 0,
        ModelKind::Upsampler => 1,
    });
    for v in [
        cfg.patch_points,
        cfg.output_points,
        cfg.bottleneck,
        cfg.group_size,
    ] {
        put_u32(&mut out, v);
    }
    put_list(&mut out, &cfg.sa_widths);
    put_list(&mut out, &cfg.pn_widths);
    put_list(&mut out, &cfg.dec_widths);
    let tensors = ckpt.params.tensors();
    put_u32(&mut out, tensors.len());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            put_u32(&mut out, d);
        }
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match &ckpt.tables {
        Some(tables) => {
            out.push(1);
            let bytes = tables.to_bytes();
            put_u32(&mut out, bytes.len());
            out.extend_from_slice(&bytes);
        }
        None => out.push(0),
    }
    out
}

pub fn read_checkpoint(data: &[u8]) -> Result<Checkpoint> {
    let bad = |msg: &str| NetworkError::Checkpoint(msg.to_string());
    let truncated = || bad("truncated file");
    let mut r = ByteReader::new(data);
    if r.take(4).ok_or_else(truncated)? != CHECKPOINT_MAGIC {
        return Err(bad("wrong magic (not a PPCC checkpoint)"));
    }
    let version = r.u32().ok_or_else(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(NetworkError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let kind = match r.u8().ok_or_else(truncated)? {
        0 => ModelKind::Compression,
        1 => ModelKind::Upsampler,
        k => return Err(NetworkError::Checkpoint(format!("unknown model kind {k}"))),
    };
    let mut next = || r.u32().map(|v| v as usize).ok_or_else(truncated);
    let patch_points = next()?;
    let output_points = next()?;
    let bottleneck = next()?;
    let group_size = next()?;
    let mut lists = Vec::new();
    for _ in 0..3 {
        let n = next()?;
        if n > 64 {
            return Err(bad("implausible layer count"));
        }
        lists.push((0..n).map(|_| next()).collect::<Result<Vec<_>>>()?);
    }
    let config = ModelConfig {
        kind,
        patch_points,
        output_points,
        bottleneck,
        group_size,
        sa_widths: lists[0].clone(),
        pn_widths: lists[1].clone(),
        dec_widths: lists[2].clone(),
    };
    config.validate()?;

    let mut params = ModelParams::<f32>::zeros(&config);
    let expected: Vec<(String, Vec<usize>)> = params
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    let count = r.u32().ok_or_else(truncated)? as usize;
    if count != expected.len() {
        return Err(NetworkError::Checkpoint(format!(
            "expected {} tensors, found {count}",
            expected.len()
        )));
    }
    for ((name, shape), slot) in expected.iter().zip(params.tensors_mut()) {
        let len = r.u16().ok_or_else(truncated)? as usize;
        let got_name = std::str::from_utf8(r.take(len).ok_or_else(truncated)?)
            .map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = r.u8().ok_or_else(truncated)? as usize;
        let got_shape = (0..rank)
            .map(|_| r.u32().map(|v| v as usize).ok_or_else(truncated))
            .collect::<Result<Vec<_>>>()?;
        if got_name != name || &got_shape != shape {
            return Err(NetworkError::Checkpoint(format!(
                "tensor {got_name} {got_shape:?} does not match expected {name} {shape:?}"
            )));
        }
        for v in slot.iter_mut() {
            *v = r.f32().ok_or_else(truncated)?;
        }
    }
    let tables = match r.u8().ok_or_else(truncated)? {
        0 => None,
        1 => {
            let len = r.u32().ok_or_else(truncated)? as usize;
            let bytes = r.take(len).ok_or_else(truncated)?;
            Some(
                CodingTables::from_bytes(bytes)
                    .map_err(|e| NetworkError::Checkpoint(e.to_string()))?,
            )
        }
        _ => return Err(bad("bad table flag")),
    };
    if r.remaining() != 0 {
        return Err(bad("trailing bytes after checkpoint"));
    }
    if !params.is_finite() {
        return Err(bad("non-finite parameter values"));
    }
    Ok(Checkpoint {
        config,
        params,
        tables,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(ckpt)).map_err(|source| NetworkError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|source| NetworkError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_checkpoint(&data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{encoder_forward, init_params};
    use ndarray::Array2;

    fn sample() -> Checkpoint {
        let config = ModelConfig::compression(32, 16, 4);
        Checkpoint {
            params: init_params(&config, 5).unwrap(),
            config,
            tables: None,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ckpt = sample();
        let bytes = write_checkpoint(&ckpt);
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(write_checkpoint(&back), bytes);

        let patch = Array2::from_shape_fn((32, 3), |(i, a)| (i * 3 + a) as f32 * 0.1);
        assert_eq!(
            encoder_forward(patch.view(), &ckpt.params, &ckpt.config).unwrap(),
            encoder_forward(patch.view(), &back.params, &back.config).unwrap()
        );
    }

    #[test]
    fn upsampler_kind_survives() {
        let config = ModelConfig::upsampler(16, 2, 4);
        let ckpt = Checkpoint {
            params: init_params(&config, 1).unwrap(),
            config,
            tables: None,
        };
        let back = read_checkpoint(&write_checkpoint(&ckpt)).unwrap();
        assert_eq!(back.config.kind, ModelKind::Upsampler);
        assert!(back.params.entropy.is_none());
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let mut bytes = write_checkpoint(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad).unwrap_err().to_string().contains("magic"));
        bytes.truncate(bytes.len() - 10);
        assert!(read_checkpoint(&bytes)
            .unwrap_err()
            .to_string()
            .contains("truncated"));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = write_checkpoint(&sample());
        bytes[4] = 9;
        assert!(read_checkpoint(&bytes)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }
}
