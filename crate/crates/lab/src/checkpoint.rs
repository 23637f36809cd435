//! Policy checkpoints: one JSON header line, then the flat parameter vector
//! as little-endian `f64`.

use std::fs;
use std::path::Path;

use fedmo_core::policy::{PolicyParams, PolicyShape};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

const MAGIC: &str = "fedmo-policy-v1";

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    prompt_dim: usize,
    vocab_size: usize,
    hidden_dim: usize,
    len: usize,
}

pub fn encode(params: &PolicyParams) -> Vec<u8> {
    let s = params.shape();
    let header = Header {
        magic: MAGIC.into(),
        prompt_dim: s.prompt_dim,
        vocab_size: s.vocab_size,
        hidden_dim: s.hidden_dim,
        len: s.len(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(8 * s.len());
    for x in params.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<PolicyParams> {
    let bad = |m: &str| LabError::Schema(format!("checkpoint: {m}"));
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header"))?;
    let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|_| bad("unreadable header"))?;
    if header.magic != MAGIC {
        return Err(bad("wrong magic"));
    }
    let shape = PolicyShape::new(header.prompt_dim, header.vocab_size, header.hidden_dim);
    let body = &bytes[nl + 1..];
    if header.len != shape.len() || body.len() != 8 * shape.len() {
        return Err(bad("length does not match shape"));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(PolicyParams::from_flat(shape, data)?)
}

pub fn save(path: &Path, params: &PolicyParams) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| LabError::io(path, e))
}

pub fn load(path: &Path) -> Result<PolicyParams> {
    decode(&fs::read(path).map_err(|e| LabError::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedmo_core::numeric::RngStream;

    #[test]
    fn round_trip_is_bitwise() {
        let shape = PolicyShape::new(3, 5, 4);
        let p = PolicyParams::init(shape, &mut RngStream::new(1, 2));
        assert_eq!(decode(&encode(&p)).unwrap(), p);
    }

    #[test]
    fn truncated_body_is_rejected() {
        let p = PolicyParams::zeros(PolicyShape::new(1, 4, 2));
        let mut bytes = encode(&p);
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(LabError::Schema(_))));
    }
}
