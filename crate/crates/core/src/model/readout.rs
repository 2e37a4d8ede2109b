//! Closed-form readout fitting for fixture models.
//!
//! A freshly drawn model predicts every byte with roughly uniform
//! probability, so no set of masked neurons can move its perplexity by an
//! order of magnitude. `fit_readout` replaces the output head with the ridge
//! regression solution that maps the final normalized hidden state at each
//! position to a scaled, centred one-hot of the next token:
//!
//! `W = Z^T H (H^T H + ridge * I)^-1`
//!
//! The transformer blocks are left as drawn.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{forward, ModelBundle, TokenSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutFit {
    pub ridge: f64,
    /// Target logit margin of the correct token over the vocabulary mean.
    pub target_scale: f64,
}

impl Default for ReadoutFit {
    fn default() -> Self {
        Self {
            ridge: 1e-2,
            target_scale: 8.0,
        }
    }
}

pub fn fit_readout(
    bundle: &ModelBundle,
    sequences: &[TokenSequence],
    fit: ReadoutFit,
) -> Result<ModelBundle> {
    let c = bundle.config();
    if c.tie_embeddings {
        return Err(Error::Config(
            "cannot fit the readout of a tied-embedding model".into(),
        ));
    }
    if !(fit.ridge > 0.0 && fit.target_scale.is_finite()) {
        return Err(Error::Config(
            "ridge must be positive and target_scale finite".into(),
        ));
    }
    let (d, v) = (c.d_model, c.vocab_size);
    let mut rows: Vec<f64> = Vec::new();
    let mut targets: Vec<usize> = Vec::new();
    for seq in sequences {
        if seq.len() < 2 {
            continue;
        }
        let emb = forward::embed(bundle, seq)?;
        let (h, _) = forward::final_hidden(bundle, &emb, &[], &[])?;
        for t in 0..seq.len() - 1 {
            rows.extend(h.row(t).iter().map(|&x| x as f64));
            targets.push(seq.ids()[t + 1] as usize);
        }
    }
    if targets.is_empty() {
        return Err(Error::Input(
            "readout fit needs at least one sequence of length >= 2".into(),
        ));
    }
    let n = targets.len();
    let h = DMatrix::from_row_slice(n, d, &rows);
    let mut z = DMatrix::from_element(n, v, -fit.target_scale / v as f64);
    for (r, &tok) in targets.iter().enumerate() {
        z[(r, tok)] += fit.target_scale;
    }
    let mut gram = h.transpose() * &h;
    for i in 0..d {
        gram[(i, i)] += fit.ridge;
    }
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Config("readout normal equations are not positive definite".into())
    })?;
    // (d, v): column j is the head row for token j.
    let solved = chol.solve(&(h.transpose() * z));
    bundle.with_tensor_edit("lm_head", |t| {
        for tok in 0..v {
            for k in 0..d {
                t.data[tok * d + k] = solved[(k, tok)] as f32;
            }
        }
    })
}
