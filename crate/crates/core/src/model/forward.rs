//! Pre-norm decoder forward pass.
//!
//! Per layer: RMSNorm, causal multi-head attention with rotary positions,
//! output projection (`attn_o_out`), residual add; RMSNorm, `silu(gate) * up`
//! (`mlp_act`), down projection (`mlp_down_out`), residual add. Then the final
//! RMSNorm and output head. Everything runs in `f32`.

use std::collections::BTreeMap;

use super::{ModelBundle, TokenSequence};
use crate::error::{Error, Result};
use crate::neuron::{InterventionPlan, InterventionSpec, SiteId, SiteKind};
use crate::tensor::{dot, linear, Matrix};

/// Rotary base frequency.
pub const ROPE_THETA: f64 = 10_000.0;

/// Captured `(T, site_width)` activations, keyed by site.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationTape {
    sites: BTreeMap<SiteId, Matrix>,
}

impl ActivationTape {
    pub fn get(&self, site: SiteId) -> Option<&Matrix> {
        self.sites.get(&site)
    }

    pub fn sites(&self) -> impl Iterator<Item = (&SiteId, &Matrix)> {
        self.sites.iter()
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub(crate) fn insert(&mut self, site: SiteId, m: Matrix) {
        self.sites.insert(site, m);
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `(T, vocab_size)`.
    pub logits: Matrix,
    pub tape: ActivationTape,
}

pub(super) fn embed(bundle: &ModelBundle, tokens: &TokenSequence) -> Result<Matrix> {
    let c = &bundle.config;
    if tokens.len() > c.max_seq_len {
        return Err(Error::Length {
            len: tokens.len(),
            max: c.max_seq_len,
        });
    }
    let table = bundle.embedding_table();
    let d = c.d_model;
    let mut out = Matrix::zeros(tokens.len(), d);
    for (t, &id) in tokens.ids().iter().enumerate() {
        let id = id as usize;
        if id >= c.vocab_size {
            return Err(Error::Input(format!("token id {id} out of range")));
        }
        out.row_mut(t).copy_from_slice(&table[id * d..(id + 1) * d]);
    }
    Ok(out)
}

fn rms_norm(x: &Matrix, gain: &[f32], eps: f32) -> Matrix {
    let mut out = x.clone();
    let d = x.cols() as f32;
    for t in 0..x.rows() {
        let row = out.row_mut(t);
        let ms = row.iter().map(|v| v * v).sum::<f32>() / d;
        let inv = 1.0 / (ms + eps).sqrt();
        for (v, g) in row.iter_mut().zip(gain) {
            *v = *v * inv * g;
        }
    }
    out
}

/// Cos/sin tables for `positions x head_dim/2` frequency pairs.
struct Rotary {
    half: usize,
    cos: Vec<f32>,
    sin: Vec<f32>,
}

impl Rotary {
    fn new(positions: usize, head_dim: usize) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(positions * half);
        let mut sin = Vec::with_capacity(positions * half);
        for p in 0..positions {
            for i in 0..half {
                let freq = ROPE_THETA.powf(-2.0 * i as f64 / head_dim as f64);
                let angle = p as f64 * freq;
                cos.push(angle.cos() as f32);
                sin.push(angle.sin() as f32);
            }
        }
        Self { half, cos, sin }
    }

    /// Rotates dims `(i, i + half)` of one head vector at position `p`. An odd
    /// trailing dimension is left unrotated.
    fn apply(&self, v: &mut [f32], p: usize) {
        let base = p * self.half;
        for i in 0..self.half {
            let (c, s) = (self.cos[base + i], self.sin[base + i]);
            let (a, b) = (v[i], v[i + self.half]);
            v[i] = a * c - b * s;
            v[i + self.half] = a * s + b * c;
        }
    }
}

fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

fn causal_attention(q: &Matrix, k: &Matrix, v: &Matrix, n_heads: usize) -> Matrix {
    let (seq, d) = (q.rows(), q.cols());
    let hd = d / n_heads;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut out = Matrix::zeros(seq, d);
    let mut scores = vec![0.0f32; seq];
    for h in 0..n_heads {
        let span = h * hd..(h + 1) * hd;
        for t in 0..seq {
            let qh = &q.row(t)[span.clone()];
            let mut max = f32::NEG_INFINITY;
            for (s, slot) in scores.iter_mut().enumerate().take(t + 1) {
                *slot = dot(qh, &k.row(s)[span.clone()]) * scale;
                max = max.max(*slot);
            }
            let mut total = 0.0;
            for slot in scores.iter_mut().take(t + 1) {
                *slot = (*slot - max).exp();
                total += *slot;
            }
            let orow = &mut out.row_mut(t)[span.clone()];
            for (s, &w) in scores.iter().enumerate().take(t + 1) {
                let w = w / total;
                for (o, &vv) in orow.iter_mut().zip(&v.row(s)[span.clone()]) {
                    *o += w * vv;
                }
            }
        }
    }
    out
}

fn add_into(acc: &mut Matrix, x: &Matrix) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *a += b;
    }
}

/// Everything up to and including the final norm.
pub(super) fn final_hidden(
    bundle: &ModelBundle,
    embeddings: &Matrix,
    interventions: &[InterventionSpec],
    capture: &[SiteId],
) -> Result<(Matrix, ActivationTape)> {
    let c = &bundle.config;
    let (seq, d, m) = (embeddings.rows(), c.d_model, c.d_mlp);
    if seq == 0 {
        return Err(Error::Input("empty embedding sequence".into()));
    }
    if seq > c.max_seq_len {
        return Err(Error::Length {
            len: seq,
            max: c.max_seq_len,
        });
    }
    if embeddings.cols() != d {
        return Err(Error::Input(format!(
            "embedding width {} does not match d_model {d}",
            embeddings.cols()
        )));
    }
    for site in capture {
        site.validate(c)?;
    }
    let plan = InterventionPlan::new(interventions, c)?;
    let eps = c.norm_eps as f32;
    let hd = c.head_dim();
    let rotary = Rotary::new(seq, hd);
    let mut tape = ActivationTape::default();
    let mut record = |site: SiteId, act: &Matrix| {
        if capture.contains(&site) {
            tape.insert(site, act.clone());
        }
    };

    let mut resid = embeddings.clone();
    for l in 0..c.n_layers {
        let w = bundle.layer(l);

        let h = rms_norm(&resid, w.attn_norm, eps);
        let mut q = linear(&h, w.q_proj, d);
        let mut k = linear(&h, w.k_proj, d);
        let v = linear(&h, w.v_proj, d);
        for t in 0..seq {
            for head in 0..c.n_heads {
                rotary.apply(&mut q.row_mut(t)[head * hd..(head + 1) * hd], t);
                rotary.apply(&mut k.row_mut(t)[head * hd..(head + 1) * hd], t);
            }
        }
        let attn = causal_attention(&q, &k, &v, c.n_heads);
        let mut o = linear(&attn, w.o_proj, d);
        let site = SiteId::new(l, SiteKind::AttnOOut);
        plan.apply(site, o.as_mut_slice(), d);
        record(site, &o);
        add_into(&mut resid, &o);

        let h = rms_norm(&resid, w.mlp_norm, eps);
        let gate = linear(&h, w.gate_proj, m);
        let mut act = linear(&h, w.up_proj, m);
        for (a, g) in act.as_mut_slice().iter_mut().zip(gate.as_slice()) {
            *a *= silu(*g);
        }
        let site = SiteId::new(l, SiteKind::MlpAct);
        plan.apply(site, act.as_mut_slice(), m);
        record(site, &act);

        let mut down = linear(&act, w.down_proj, d);
        let site = SiteId::new(l, SiteKind::MlpDownOut);
        plan.apply(site, down.as_mut_slice(), d);
        record(site, &down);
        add_into(&mut resid, &down);
    }

    let h = rms_norm(&resid, bundle.final_norm(), eps);
    Ok((h, tape))
}

pub(super) fn forward(
    bundle: &ModelBundle,
    embeddings: &Matrix,
    interventions: &[InterventionSpec],
    capture: &[SiteId],
) -> Result<ForwardOutput> {
    let (h, tape) = final_hidden(bundle, embeddings, interventions, capture)?;
    let logits = linear(&h, bundle.output_head(), bundle.config.vocab_size);
    Ok(ForwardOutput { logits, tape })
}
