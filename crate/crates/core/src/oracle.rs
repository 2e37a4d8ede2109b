//! Slow reference implementations used to cross-check the main pipeline.
//!
//! Nothing here calls into the engine's arithmetic: weights are read by
//! tensor name and every quantity is recomputed with plain `f64` loops.
//! Suitable only for fixture-sized models.

use serde::{Deserialize, Serialize};

use crate::model::{ActivationTape, LanguageModel, ModelBundle, ModelConfig, TokenSequence};
use crate::neuron::{InterventionSpec, NeuronId, SiteId, SiteKind};
use crate::tensor::Matrix;

/// Full forward passes.
pub const FORWARD_TOL: f64 = 1e-4;
/// Direct formula transcriptions.
pub const FORMULA_TOL: f64 = 1e-6;
/// Pure scalar formulas.
pub const SCALAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub quantity: String,
    pub main: f64,
    pub oracle: f64,
    pub abs_diff: f64,
    pub rel_diff: f64,
    pub tolerance: f64,
    pub relative: bool,
    pub pass: bool,
}

impl OracleReport {
    pub fn absolute(quantity: impl Into<String>, main: f64, oracle: f64, tolerance: f64) -> Self {
        Self::build(quantity.into(), main, oracle, tolerance, false)
    }

    pub fn relative(quantity: impl Into<String>, main: f64, oracle: f64, tolerance: f64) -> Self {
        Self::build(quantity.into(), main, oracle, tolerance, true)
    }

    fn build(quantity: String, main: f64, oracle: f64, tolerance: f64, relative: bool) -> Self {
        let abs_diff = (main - oracle).abs();
        let rel_diff = if oracle == 0.0 {
            abs_diff
        } else {
            abs_diff / oracle.abs()
        };
        let measured = if relative { rel_diff } else { abs_diff };
        Self {
            quantity,
            main,
            oracle,
            abs_diff,
            rel_diff,
            tolerance,
            relative,
            pass: measured <= tolerance,
        }
    }
}

fn weights<'a>(bundle: &'a ModelBundle, name: &str) -> &'a [f32] {
    &bundle
        .tensor(name)
        .unwrap_or_else(|| panic!("oracle: no tensor `{name}`"))
        .data
}

/// `out[t][o] = sum_i x[t][i] * w[o][i]`
fn matvec_rows(x: &[Vec<f64>], w: &[f32], out_dim: usize) -> Vec<Vec<f64>> {
    let in_dim = x.first().map_or(0, |r| r.len());
    x.iter()
        .map(|row| {
            (0..out_dim)
                .map(|o| {
                    let mut acc = 0.0;
                    for i in 0..in_dim {
                        acc += row[i] * w[o * in_dim + i] as f64;
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn rmsnorm_rows(x: &[Vec<f64>], gain: &[f32], eps: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let mut ss = 0.0;
            for v in row {
                ss += v * v;
            }
            let scale = 1.0 / (ss / row.len() as f64 + eps).sqrt();
            row.iter()
                .zip(gain)
                .map(|(v, &g)| v * scale * g as f64)
                .collect()
        })
        .collect()
}

fn rotate(v: &mut [f64], pos: usize, theta: f64) {
    let dim = v.len();
    let half = dim / 2;
    for i in 0..half {
        let angle = pos as f64 / theta.powf((2 * i) as f64 / dim as f64);
        let (s, c) = angle.sin_cos();
        let a = v[i];
        let b = v[i + half];
        v[i] = a * c - b * s;
        v[i + half] = a * s + b * c;
    }
}

/// Applies one spec to a `(T, width)` site in `f64`.
fn intervene(site: SiteId, rows: &mut [Vec<f64>], specs: &[InterventionSpec]) {
    for spec in specs {
        for n in &spec.neurons {
            if n.layer == site.layer && n.site == site.kind {
                for row in rows.iter_mut() {
                    row[n.index] = row[n.index] * spec.beta as f64 + spec.delta as f64;
                }
            }
        }
    }
}

/// Logits for `embeddings` under optional interventions, all in `f64`.
pub fn oracle_forward_with(
    bundle: &ModelBundle,
    embeddings: &Matrix,
    interventions: &[InterventionSpec],
) -> Vec<Vec<f64>> {
    let cfg: &ModelConfig = bundle.config();
    let seq = embeddings.rows();
    let (d, m, heads) = (cfg.d_model, cfg.d_mlp, cfg.n_heads);
    let hd = d / heads;
    let mut x: Vec<Vec<f64>> = (0..seq)
        .map(|t| embeddings.row(t).iter().map(|&v| v as f64).collect())
        .collect();

    for l in 0..cfg.n_layers {
        let name = |s: &str| format!("layers.{l}.{s}");
        let h = rmsnorm_rows(&x, weights(bundle, &name("attn_norm")), cfg.norm_eps);
        let mut q = matvec_rows(&h, weights(bundle, &name("q_proj")), d);
        let mut k = matvec_rows(&h, weights(bundle, &name("k_proj")), d);
        let v = matvec_rows(&h, weights(bundle, &name("v_proj")), d);
        for t in 0..seq {
            for head in 0..heads {
                rotate(
                    &mut q[t][head * hd..(head + 1) * hd],
                    t,
                    crate::model::ROPE_THETA,
                );
                rotate(
                    &mut k[t][head * hd..(head + 1) * hd],
                    t,
                    crate::model::ROPE_THETA,
                );
            }
        }
        let mut attn = vec![vec![0.0; d]; seq];
        for head in 0..heads {
            let lo = head * hd;
            for t in 0..seq {
                let mut logits = Vec::with_capacity(t + 1);
                for key in &k[..=t] {
                    let mut acc = 0.0;
                    for j in 0..hd {
                        acc += q[t][lo + j] * key[lo + j];
                    }
                    logits.push(acc / (hd as f64).sqrt());
                }
                let peak = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let weights_: Vec<f64> = logits.iter().map(|z| (z - peak).exp()).collect();
                let norm: f64 = weights_.iter().sum();
                for s in 0..=t {
                    for j in 0..hd {
                        attn[t][lo + j] += weights_[s] / norm * v[s][lo + j];
                    }
                }
            }
        }
        let mut o = matvec_rows(&attn, weights(bundle, &name("o_proj")), d);
        intervene(SiteId::new(l, SiteKind::AttnOOut), &mut o, interventions);
        for t in 0..seq {
            for j in 0..d {
                x[t][j] += o[t][j];
            }
        }

        let h = rmsnorm_rows(&x, weights(bundle, &name("mlp_norm")), cfg.norm_eps);
        let gate = matvec_rows(&h, weights(bundle, &name("gate_proj")), m);
        let up = matvec_rows(&h, weights(bundle, &name("up_proj")), m);
        let mut act: Vec<Vec<f64>> = gate
            .iter()
            .zip(&up)
            .map(|(g, u)| {
                g.iter()
                    .zip(u)
                    .map(|(&g, &u)| g / (1.0 + (-g).exp()) * u)
                    .collect()
            })
            .collect();
        intervene(SiteId::new(l, SiteKind::MlpAct), &mut act, interventions);
        let mut down = matvec_rows(&act, weights(bundle, &name("down_proj")), d);
        intervene(
            SiteId::new(l, SiteKind::MlpDownOut),
            &mut down,
            interventions,
        );
        for t in 0..seq {
            for j in 0..d {
                x[t][j] += down[t][j];
            }
        }
    }

    let h = rmsnorm_rows(&x, weights(bundle, "final_norm"), cfg.norm_eps);
    let head = if cfg.tie_embeddings {
        weights(bundle, "embed_tokens")
    } else {
        weights(bundle, "lm_head")
    };
    matvec_rows(&h, head, cfg.vocab_size)
}

pub fn oracle_forward(bundle: &ModelBundle, embeddings: &Matrix) -> Vec<Vec<f64>> {
    oracle_forward_with(bundle, embeddings, &[])
}

/// `log P(tokens[t+1] | tokens[..=t])` for every predicted position.
pub fn oracle_log_probs(logits: &[Vec<f64>], tokens: &TokenSequence) -> Vec<f64> {
    let ids = tokens.ids();
    (1..ids.len())
        .map(|t| {
            let row = &logits[t - 1];
            let peak = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - peak).exp()).sum();
            row[ids[t] as usize] - peak - z.ln()
        })
        .collect()
}

/// Engine logits widened to `f64` rows.
pub fn logits_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|t| m.row(t).iter().map(|&v| v as f64).collect())
        .collect()
}

/// `exp(-(1/n) sum log p)`.
pub fn oracle_ppl(log_probs: &[f64]) -> f64 {
    let mut nll = 0.0;
    for lp in log_probs {
        nll -= lp;
    }
    (nll / log_probs.len() as f64).exp()
}

/// `(1 / (n ln 10)) * sum_t [log P_clean - log P_masked]`.
pub fn oracle_delta(clean_log_probs: &[f64], masked_log_probs: &[f64]) -> f64 {
    let n = clean_log_probs.len() as f64;
    let mut total = 0.0;
    for (c, m) in clean_log_probs.iter().zip(masked_log_probs) {
        total += c - m;
    }
    total / (n * std::f64::consts::LN_10)
}

/// Mean-over-positions importance from a clean tape and `K` noisy tapes,
/// in canonical neuron order. Iterations are summed last-to-first and
/// positions back-to-front.
pub fn oracle_importance(
    config: &ModelConfig,
    clean: &ActivationTape,
    noisy: &[ActivationTape],
) -> Vec<f64> {
    let mut scores = Vec::new();
    for site in SiteId::all(config) {
        let a = clean.get(site).expect("clean tape missing site");
        for c in 0..a.cols() {
            let mut acc = 0.0;
            for tape in noisy.iter().rev() {
                let b = tape.get(site).expect("noisy tape missing site");
                let mut per = 0.0;
                for t in (0..a.rows()).rev() {
                    per += (a.get(t, c) as f64 - b.get(t, c) as f64).abs();
                }
                acc += per / a.rows() as f64;
            }
            scores.push(acc / noisy.len() as f64);
        }
    }
    scores
}

/// Straight-line greedy prefix search; returns `(n_star, delta)` or `None`.
pub fn oracle_greedy<M: LanguageModel + ?Sized>(
    model: &M,
    tokens: &TokenSequence,
    order: &[NeuronId],
    epsilon: f64,
    step: usize,
    max_n: usize,
) -> Option<(usize, f64)> {
    let emb = model.embed(tokens).expect("embed");
    let clean = model.forward(&emb, &[], &[]).expect("forward");
    let clean_lp = oracle_log_probs(&logits_rows(&clean.logits), tokens);
    let mut n = step;
    while n <= max_n {
        let spec = InterventionSpec::mask(order[..n].iter().copied());
        let out = model.forward(&emb, &[spec], &[]).expect("forward");
        let lp = oracle_log_probs(&logits_rows(&out.logits), tokens);
        let delta = oracle_delta(&clean_lp, &lp);
        if delta >= epsilon {
            return Some((n, delta));
        }
        n += step;
    }
    None
}
