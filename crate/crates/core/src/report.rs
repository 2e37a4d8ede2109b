//! Shared serialization helpers for emitted reports.

use serde::Serialize;
use xxhash_rust::xxh64::xxh64;

use crate::error::Result;

/// Serializes `f64` as a JSON number when finite and as the strings
/// `"inf"` / `"-inf"` / `"nan"` otherwise.
pub mod f64_or_inf {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!(
                    "expected number or inf, got `{other}`"
                ))),
            },
        }
    }
}

/// Renders a float for CSV cells, spelling infinities as `inf`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn hash_bytes(bytes: &[u8]) -> u64 {
    xxh64(bytes, 0)
}

/// XXH64 of the compact JSON encoding of `value`.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> Result<u64> {
    Ok(hash_bytes(&serde_json::to_vec(value)?))
}

pub fn hex64(v: u64) -> String {
    format!("{v:016x}")
}

/// Hash of a token sequence (ids as little-endian `u32`).
pub fn probe_hash(tokens: &crate::model::TokenSequence) -> u64 {
    let bytes: Vec<u8> = tokens.ids().iter().flat_map(|t| t.to_le_bytes()).collect();
    hash_bytes(&bytes)
}
