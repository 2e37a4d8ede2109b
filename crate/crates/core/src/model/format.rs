//! `NLF1` weight files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..4  | magic `NLF1` (the trailing `1` is the format version) |
//! | 4..8  | `u32` length `H` of the JSON header |
//! | 8..8+H | UTF-8 JSON: `n_layers`, `d_model`, `n_heads`, `d_mlp`, `vocab_size`, `max_seq_len`, `norm_eps`, `tie_embeddings`, `tensor_order` |
//! | ... | each tensor of `tensor_order`, row-major IEEE-754 binary32 |
//! | last 8 | XXH64 (seed 0) of every preceding byte, as `u64` |
//!
//! The digest doubles as the bundle's content hash.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use super::{ModelBundle, ModelConfig, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NLF1";

#[derive(Serialize, Deserialize)]
struct Header {
    n_layers: usize,
    d_model: usize,
    n_heads: usize,
    d_mlp: usize,
    vocab_size: usize,
    max_seq_len: usize,
    norm_eps: f64,
    tie_embeddings: bool,
    tensor_order: Vec<String>,
}

fn encode_body(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let c = &bundle.config;
    let header = Header {
        n_layers: c.n_layers,
        d_model: c.d_model,
        n_heads: c.n_heads,
        d_mlp: c.d_mlp,
        vocab_size: c.vocab_size,
        max_seq_len: c.max_seq_len,
        norm_eps: c.norm_eps,
        tie_embeddings: c.tie_embeddings,
        tensor_order: bundle.tensors.iter().map(|t| t.name.clone()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let numel: usize = bundle.tensors.iter().map(|t| t.data.len()).sum();
    let mut out = Vec::with_capacity(8 + json.len() + 4 * numel + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &bundle.tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub(super) fn digest_of(bundle: &ModelBundle) -> Result<u64> {
    Ok(xxh64(&encode_body(bundle)?, 0))
}

pub fn write_model<W: Write>(bundle: &ModelBundle, mut w: W) -> Result<()> {
    let mut bytes = encode_body(bundle)?;
    let digest = xxh64(&bytes, 0);
    bytes.extend_from_slice(&digest.to_le_bytes());
    w.write_all(&bytes)?;
    Ok(())
}

pub fn save_model(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_model(bundle, &mut buf)?;
    fs::write(path, buf).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

pub fn read_model<R: Read>(mut r: R) -> Result<ModelBundle> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < 8 {
        return Err(Error::format("file shorter than the fixed preamble"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(format!("bad magic {:?}", &bytes[..4])));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_end = 8usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format("header length runs past end of file"))?;
    let header: Header = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| Error::format(format!("malformed header: {e}")))?;
    let config = ModelConfig {
        n_layers: header.n_layers,
        d_model: header.d_model,
        n_heads: header.n_heads,
        d_mlp: header.d_mlp,
        vocab_size: header.vocab_size,
        max_seq_len: header.max_seq_len,
        norm_eps: header.norm_eps,
        tie_embeddings: header.tie_embeddings,
    };
    config
        .validate()
        .map_err(|e| Error::format(format!("invalid config in header: {e}")))?;
    let layout = config.tensor_layout();
    let expected: Vec<&str> = layout.iter().map(|(n, _)| n.as_str()).collect();
    if header.tensor_order != expected {
        return Err(Error::format(
            "tensor_order does not match the layout implied by the config",
        ));
    }

    let numel: usize = layout
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    let payload_len = numel
        .checked_mul(4)
        .ok_or_else(|| Error::format("tensor payload size overflows"))?;
    let expected_len = header_end + payload_len + 8;
    if bytes.len() != expected_len {
        return Err(Error::format(format!(
            "file is {} bytes, layout requires {expected_len}",
            bytes.len()
        )));
    }

    let mut cursor = header_end;
    let mut tensors = Vec::with_capacity(layout.len());
    for (name, shape) in layout {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = bytes[cursor..cursor + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format_in(
                name,
                format!("non-finite value at element {pos}"),
            ));
        }
        cursor += 4 * n;
        tensors.push(Tensor { name, shape, data });
    }

    let stored = u64::from_le_bytes(bytes[cursor..cursor + 8].try_into().unwrap());
    let actual = xxh64(&bytes[..cursor], 0);
    if stored != actual {
        return Err(Error::format(format!(
            "digest mismatch: stored {stored:016x}, computed {actual:016x}"
        )));
    }
    let bundle = ModelBundle::from_tensors(config, tensors)?;
    debug_assert_eq!(bundle.content_hash, actual);
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_model;

    fn tiny() -> ModelBundle {
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_mlp: 16,
            vocab_size: 256,
            max_seq_len: 32,
            norm_eps: 1e-5,
            tie_embeddings: false,
        };
        generate_model(&cfg, 7).unwrap()
    }

    fn bytes_of(b: &ModelBundle) -> Vec<u8> {
        let mut v = Vec::new();
        write_model(b, &mut v).unwrap();
        v
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = tiny();
        let bytes = bytes_of(&m);
        let back = read_model(bytes.as_slice()).unwrap();
        assert_eq!(back.content_hash(), m.content_hash());
        assert_eq!(bytes_of(&back), bytes);
        let trailer = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        assert_eq!(trailer, m.content_hash());
    }

    #[test]
    fn header_field_names() {
        let bytes = bytes_of(&tiny());
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let v: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        for k in [
            "n_layers",
            "d_model",
            "n_heads",
            "d_mlp",
            "vocab_size",
            "max_seq_len",
            "norm_eps",
            "tie_embeddings",
            "tensor_order",
        ] {
            assert!(keys.contains(&k), "missing {k}");
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = bytes_of(&tiny());
        for cut in [0, 3, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(read_model(&bytes[..cut]), Err(Error::Format { .. })),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = bytes_of(&tiny());
        bytes[3] = b'2';
        assert!(matches!(
            read_model(bytes.as_slice()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn nan_names_tensor() {
        let m = tiny();
        let mut bytes = bytes_of(&m);
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let mut offset = 8 + len;
        for t in m.tensors() {
            if t.name == "layers.0.down_proj" {
                break;
            }
            offset += 4 * t.data.len();
        }
        bytes[offset + 4..offset + 8].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = read_model(bytes.as_slice()).unwrap_err();
        match err {
            Error::Format { tensor, .. } => {
                assert_eq!(tensor.as_deref(), Some("layers.0.down_proj"))
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn flipped_payload_byte_fails_digest() {
        let mut bytes = bytes_of(&tiny());
        let i = bytes.len() - 20;
        bytes[i] ^= 0x01;
        assert!(matches!(
            read_model(bytes.as_slice()),
            Err(Error::Format { .. })
        ));
    }
}
