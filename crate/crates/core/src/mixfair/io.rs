//! FFMP binary block for trained parameters.
//!
//! Layout, little-endian:
//!
//! ```text
//! "FFMP" | u32 version=1 | u32 d_in | u32 d_k | u32 d_f | u32 n_id
//! u8 encoder activation | u8 debias activation | f64 s | f64 m
//! W_E, W_M, W as f64, row-major
//! ```

use std::path::Path;

use ndarray::Array2;

use super::{Activation, ModelParams};
use crate::error::{Error, Result};

pub const FFMP_MAGIC: &[u8; 4] = b"FFMP";
pub const FFMP_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 5 + 2 + 16;

pub fn encode_params(params: &ModelParams) -> Vec<u8> {
    let tensors = params.tensors();
    let len: usize = tensors.iter().map(|(_, t)| t.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * len);
    out.extend_from_slice(FFMP_MAGIC);
    for v in [
        FFMP_VERSION,
        params.d_in() as u32,
        params.d_k() as u32,
        params.d_f() as u32,
        params.n_id() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(params.encoder_activation.code());
    out.push(params.debias_activation.code());
    out.extend_from_slice(&params.s.to_le_bytes());
    out.extend_from_slice(&params.m.to_le_bytes());
    for (_, t) in tensors {
        // iter() walks logical row-major order regardless of memory layout
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if &bytes[..4] != FFMP_MAGIC {
        return Err(Error::format(0, "magic mismatch: not an FFMP file"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
    let f64_at = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != FFMP_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let dims: Vec<usize> = (0..4).map(|i| u32_at(8 + 4 * i) as usize).collect();
    let (d_in, d_k, d_f, n_id) = (dims[0], dims[1], dims[2], dims[3]);
    if dims.contains(&0) {
        return Err(Error::format(8, "zero dimension"));
    }
    let act = |off: usize| {
        Activation::from_code(bytes[off])
            .ok_or_else(|| Error::format(off as u64, format!("unknown activation code {}", bytes[off])))
    };
    let encoder_activation = act(24)?;
    let debias_activation = act(25)?;
    let s = f64_at(26);
    let m = f64_at(34);

    let shapes = [(d_in, d_k), (d_k, d_f), (n_id, d_f)];
    let need = shapes
        .iter()
        .try_fold(0usize, |acc, &(r, c)| r.checked_mul(c).and_then(|n| acc.checked_add(n)))
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format(8, "dimensions overflow"))?;
    if bytes.len() < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: need {need} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > need {
        return Err(Error::format(need as u64, "trailing bytes after tensors"));
    }
    let mut off = HEADER_LEN;
    let mut take = |(r, c): (usize, usize)| {
        let t = Array2::from_shape_fn((r, c), |(i, j)| f64_at(off + 8 * (i * c + j)));
        off += 8 * r * c;
        t
    };
    let params = ModelParams {
        w_e: take(shapes[0]),
        w_m: take(shapes[1]),
        w: take(shapes[2]),
        s,
        m,
        encoder_activation,
        debias_activation,
    };
    params
        .validate()
        .map_err(|e| Error::format(HEADER_LEN as u64, format!("invalid parameters: {e}")))?;
    Ok(params)
}

pub fn save_params(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes)
}
