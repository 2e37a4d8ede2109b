//! Teacher-forced perplexity and the log10 degradation ratio.
//!
//! Position 0 has no prediction; a sequence of `T` tokens scores `T - 1`
//! transitions. Log-probabilities are computed in `f64` with max
//! subtraction. A predicted-token probability below `exp(-80)` clamps that
//! token's NLL at 80 nats and marks the report as underflowed; its `ppl` is
//! then `+inf`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{tokenize, LanguageModel, TokenSequence};
use crate::neuron::{InterventionSpec, NeuronId};
use crate::tensor::Matrix;

pub const NLL_CLAMP: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    #[serde(with = "crate::report::f64_or_inf")]
    pub ppl: f64,
    /// Nats per predicted token.
    pub mean_nll: f64,
    pub n_predicted: usize,
    pub underflow: bool,
}

impl PerplexityReport {
    fn from_nll_sum(total: f64, n_predicted: usize, underflow: bool) -> Self {
        let mean_nll = total / n_predicted as f64;
        Self {
            ppl: if underflow {
                f64::INFINITY
            } else {
                mean_nll.exp()
            },
            mean_nll,
            n_predicted,
            underflow,
        }
    }
}

/// Per-token negative log-likelihoods of `tokens[1..]` given `logits[..T-1]`,
/// clamped at [`NLL_CLAMP`]. The flag reports whether any clamp fired.
pub fn token_nlls(logits: &Matrix, tokens: &TokenSequence) -> (Vec<f64>, bool) {
    let ids = tokens.ids();
    let mut underflow = false;
    let nlls = (0..ids.len().saturating_sub(1))
        .map(|t| {
            let row = logits.row(t);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
            let nll = max + sum.ln() - row[ids[t + 1] as usize] as f64;
            if nll > NLL_CLAMP {
                underflow = true;
                NLL_CLAMP
            } else {
                nll
            }
        })
        .collect();
    (nlls, underflow)
}

fn check_scorable(tokens: &TokenSequence) -> Result<()> {
    if tokens.len() < 2 {
        return Err(Error::Input(format!(
            "perplexity needs at least 2 tokens, got {}",
            tokens.len()
        )));
    }
    Ok(())
}

/// Perplexity under an ordered list of interventions (empty = clean model).
pub fn perplexity_with<M: LanguageModel + ?Sized>(
    model: &M,
    tokens: &TokenSequence,
    interventions: &[InterventionSpec],
) -> Result<PerplexityReport> {
    check_scorable(tokens)?;
    let emb = model.embed(tokens)?;
    let out = model.forward(&emb, interventions, &[])?;
    let (nlls, underflow) = token_nlls(&out.logits, tokens);
    Ok(PerplexityReport::from_nll_sum(
        nlls.iter().sum(),
        nlls.len(),
        underflow,
    ))
}

pub fn perplexity<M: LanguageModel + ?Sized>(
    model: &M,
    tokens: &TokenSequence,
    intervention: Option<&InterventionSpec>,
) -> Result<PerplexityReport> {
    perplexity_with(
        model,
        tokens,
        intervention.map(std::slice::from_ref).unwrap_or(&[]),
    )
}

/// `log10(ppl_masked / ppl_clean)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    #[serde(with = "crate::report::f64_or_inf")]
    pub delta: f64,
    /// The masked side underflowed while the clean side did not; `delta` is
    /// `+inf`.
    pub infinite: bool,
}

impl Degradation {
    pub fn between(clean: &PerplexityReport, masked: &PerplexityReport) -> Self {
        if masked.underflow && !clean.underflow {
            return Self {
                delta: f64::INFINITY,
                infinite: true,
            };
        }
        Self {
            delta: (masked.mean_nll - clean.mean_nll) / std::f64::consts::LN_10,
            infinite: false,
        }
    }

    /// `+inf` compares as crossing any finite threshold.
    pub fn crosses(&self, epsilon: f64) -> bool {
        self.delta >= epsilon
    }
}

pub fn degradation<M: LanguageModel + ?Sized>(
    model: &M,
    tokens: &TokenSequence,
    neuron_set: &[NeuronId],
) -> Result<Degradation> {
    let clean = perplexity(model, tokens, None)?;
    let masked = perplexity(
        model,
        tokens,
        Some(&InterventionSpec::mask(neuron_set.iter().copied())),
    )?;
    Ok(Degradation::between(&clean, &masked))
}

/// Token-weighted perplexity over several sequences.
pub fn corpus_perplexity<M: LanguageModel + ?Sized>(
    model: &M,
    sequences: &[TokenSequence],
    interventions: &[InterventionSpec],
) -> Result<PerplexityReport> {
    if sequences.is_empty() {
        return Err(Error::Input("corpus has no sequences".into()));
    }
    if let [only] = sequences {
        return perplexity_with(model, only, interventions);
    }
    let mut total = 0.0;
    let mut count = 0;
    let mut underflow = false;
    for seq in sequences {
        let r = perplexity_with(model, seq, interventions)?;
        total += r.mean_nll * r.n_predicted as f64;
        count += r.n_predicted;
        underflow |= r.underflow;
    }
    Ok(PerplexityReport::from_nll_sum(total, count, underflow))
}

/// Corpus file: one UTF-8 sequence per line, blank lines skipped.
pub fn parse_corpus(text: &str, config: &crate::model::ModelConfig) -> Result<Vec<TokenSequence>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            tokenize(l, config).map_err(|e| Error::Input(format!("corpus line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn load_corpus(
    path: impl AsRef<Path>,
    config: &crate::model::ModelConfig,
) -> Result<Vec<TokenSequence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&text, config)
}
