//! Monte Carlo noise-sensitivity scoring.
//!
//! Clean activations are captured once. Each of `K` iterations perturbs the
//! whole `(T, d_model)` embedding tensor with `alpha * N(0, I)` noise drawn
//! from stream `(seed, i)`, captures every site, and reduces
//! `|clean - noisy|` over positions per neuron. The score is the mean of
//! those per-iteration values; iterations may run in parallel but are summed
//! in index order.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::StrategyId;
use crate::error::{Error, Result};
use crate::model::{ActivationTape, LanguageModel, ModelConfig, TokenSequence};
use crate::neuron::{enumerate_neurons, neuron_count, NeuronId, SiteId};
use crate::report::probe_hash;
use crate::rng::GaussianStream;
use crate::tensor::Matrix;

/// How per-position absolute differences collapse to one value per neuron.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionReduction {
    #[default]
    Mean,
    Max,
    Last,
}

impl PositionReduction {
    pub(crate) fn reduce(self, column: impl Iterator<Item = f64>) -> f64 {
        match self {
            PositionReduction::Mean => {
                let (sum, n) = column.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                sum / n as f64
            }
            PositionReduction::Max => column.fold(0.0, f64::max),
            PositionReduction::Last => column.last().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub alpha: f64,
    pub k_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub reduction: PositionReduction,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            k_samples: 100,
            seed: 0,
            reduction: PositionReduction::Mean,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.k_samples == 0 {
            return Err(Error::Config("k_samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedNeuron {
    #[serde(flatten)]
    pub neuron: NeuronId,
    pub score: f64,
}

/// Neurons sorted by descending score, ties in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub strategy: StrategyId,
    pub entries: Vec<RankedNeuron>,
    pub noise: Option<NoiseConfig>,
    pub reduction: PositionReduction,
    pub probe_hash: Option<u64>,
    pub model_hash: u64,
}

impl ImportanceRanking {
    /// Sorts canonical-order `scores` descending. The sort is stable, so
    /// equal scores keep canonical order.
    pub fn from_scores(
        config: &ModelConfig,
        scores: &[f64],
        strategy: StrategyId,
        model_hash: u64,
    ) -> Result<Self> {
        let neurons = enumerate_neurons(config);
        if scores.len() != neurons.len() {
            return Err(Error::Addressing(format!(
                "{} scores for {} neurons",
                scores.len(),
                neurons.len()
            )));
        }
        let mut entries: Vec<RankedNeuron> = neurons
            .into_iter()
            .zip(scores)
            .map(|(neuron, &score)| RankedNeuron { neuron, score })
            .collect();
        entries.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(Self {
            strategy,
            entries,
            noise: None,
            reduction: PositionReduction::Mean,
            probe_hash: None,
            model_hash,
        })
    }

    /// Ranking carried by order alone (all scores zero).
    pub fn from_order(order: Vec<NeuronId>, strategy: StrategyId, model_hash: u64) -> Self {
        Self {
            strategy,
            entries: order
                .into_iter()
                .map(|neuron| RankedNeuron { neuron, score: 0.0 })
                .collect(),
            noise: None,
            reduction: PositionReduction::Mean,
            probe_hash: None,
            model_hash,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self, n: usize) -> Vec<NeuronId> {
        self.entries.iter().take(n).map(|e| e.neuron).collect()
    }

    pub fn neurons(&self) -> impl Iterator<Item = NeuronId> + '_ {
        self.entries.iter().map(|e| e.neuron)
    }

    pub fn score_of(&self, neuron: NeuronId) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.neuron == neuron)
            .map(|e| e.score)
    }

    /// Scores back in canonical neuron order.
    pub fn canonical_scores(&self, config: &ModelConfig) -> Vec<f64> {
        let mut out = vec![0.0; self.entries.len()];
        for e in &self.entries {
            out[e.neuron.canonical_index(config)] = e.score;
        }
        out
    }

    /// Checks that the ranking is a permutation of `config`'s neuron space.
    pub fn check_covers(&self, config: &ModelConfig) -> Result<()> {
        let n = neuron_count(config);
        if self.entries.len() != n {
            return Err(Error::Addressing(format!(
                "ranking has {} entries, model has {n} neurons",
                self.entries.len()
            )));
        }
        let mut seen = vec![false; n];
        for e in &self.entries {
            e.neuron.validate(config)?;
            let i = e.neuron.canonical_index(config);
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Addressing(format!(
                    "neuron {} ranked twice",
                    e.neuron
                )));
            }
        }
        Ok(())
    }

    /// CSV with columns `layer,site,index,score,rank` (rank is 1-based).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["layer", "site", "index", "score", "rank"])?;
        for (rank, e) in self.entries.iter().enumerate() {
            out.write_record([
                e.neuron.layer.to_string(),
                e.neuron.site.to_string(),
                e.neuron.index.to_string(),
                format!("{}", e.score),
                (rank + 1).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `embeddings + alpha * eps_i`, with `eps_i` drawn row-major from stream
/// `(seed, i)`.
pub fn perturbed_embeddings(embeddings: &Matrix, noise: &NoiseConfig, iteration: u64) -> Matrix {
    let mut stream = GaussianStream::new(noise.seed, iteration);
    let mut out = embeddings.clone();
    for v in out.as_mut_slice() {
        *v += (noise.alpha * stream.next_normal()) as f32;
    }
    out
}

/// Per-neuron position-reduced `|clean - noisy|`, in canonical order.
pub fn tape_differences(
    config: &ModelConfig,
    clean: &ActivationTape,
    noisy: &ActivationTape,
    reduction: PositionReduction,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(neuron_count(config));
    for site in SiteId::all(config) {
        let missing = || Error::Addressing(format!("tape is missing site {site}"));
        let a = clean.get(site).ok_or_else(missing)?;
        let b = noisy.get(site).ok_or_else(missing)?;
        for c in 0..a.cols() {
            out.push(
                reduction
                    .reduce((0..a.rows()).map(|t| (a.get(t, c) as f64 - b.get(t, c) as f64).abs())),
            );
        }
    }
    Ok(out)
}

/// One Monte Carlo iteration's per-neuron contribution, canonical order.
pub fn iteration_scores<M: LanguageModel + ?Sized>(
    model: &M,
    embeddings: &Matrix,
    clean: &ActivationTape,
    noise: &NoiseConfig,
    iteration: u64,
) -> Result<Vec<f64>> {
    let sites = SiteId::all(model.config());
    let noisy = model.forward(
        &perturbed_embeddings(embeddings, noise, iteration),
        &[],
        &sites,
    )?;
    tape_differences(model.config(), clean, &noisy.tape, noise.reduction)
}

pub fn score_neurons<M: LanguageModel + ?Sized>(
    model: &M,
    tokens: &TokenSequence,
    noise: &NoiseConfig,
) -> Result<ImportanceRanking> {
    noise.validate()?;
    let config = model.config();
    let sites = SiteId::all(config);
    let embeddings = model.embed(tokens)?;
    let clean = model.forward(&embeddings, &[], &sites)?.tape;

    let per_iteration: Vec<Vec<f64>> = (0..noise.k_samples as u64)
        .into_par_iter()
        .map(|i| iteration_scores(model, &embeddings, &clean, noise, i))
        .collect::<Result<_>>()?;

    let mut totals = vec![0.0f64; neuron_count(config)];
    for contrib in &per_iteration {
        for (acc, v) in totals.iter_mut().zip(contrib) {
            *acc += v;
        }
    }
    let k = noise.k_samples as f64;
    let scores: Vec<f64> = totals.into_iter().map(|s| s / k).collect();

    let mut ranking = ImportanceRanking::from_scores(
        config,
        &scores,
        StrategyId::Perturbation,
        model.content_hash(),
    )?;
    ranking.noise = Some(*noise);
    ranking.reduction = noise.reduction;
    ranking.probe_hash = Some(probe_hash(tokens));
    Ok(ranking)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOverlap {
    pub seed_a: u64,
    pub seed_b: u64,
    /// Jaccard index of the two top-n sets.
    pub jaccard: f64,
    /// Spearman correlation of full-ranking positions.
    pub spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub top_n: usize,
    pub noise: NoiseConfig,
    pub pairs: Vec<PairOverlap>,
    pub mean_jaccard: f64,
    pub min_jaccard: f64,
    pub mean_spearman: f64,
}

pub fn top_n_jaccard(a: &ImportanceRanking, b: &ImportanceRanking, top_n: usize) -> f64 {
    use std::collections::BTreeSet;
    let sa: BTreeSet<NeuronId> = a.top(top_n).into_iter().collect();
    let sb: BTreeSet<NeuronId> = b.top(top_n).into_iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

pub fn spearman(a: &ImportanceRanking, b: &ImportanceRanking, config: &ModelConfig) -> f64 {
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let positions = |r: &ImportanceRanking| {
        let mut pos = vec![0usize; n];
        for (rank, e) in r.entries.iter().enumerate() {
            pos[e.neuron.canonical_index(config)] = rank;
        }
        pos
    };
    let (pa, pb) = (positions(a), positions(b));
    let d2: f64 = pa
        .iter()
        .zip(&pb)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    let n = n as f64;
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// `n` consecutive seeds starting at `base`.
pub fn distinct_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Scores under every seed in `seeds` and reports pairwise top-n overlap.
pub fn ranking_stability<M: LanguageModel + ?Sized>(
    model: &M,
    tokens: &TokenSequence,
    noise: &NoiseConfig,
    seeds: &[u64],
    top_n: usize,
) -> Result<StabilityReport> {
    if seeds.len() < 2 {
        return Err(Error::Input(
            "ranking stability needs at least two seeds".into(),
        ));
    }
    let rankings = seeds
        .iter()
        .map(|&seed| score_neurons(model, tokens, &NoiseConfig { seed, ..*noise }))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for i in 0..rankings.len() {
        for j in i + 1..rankings.len() {
            pairs.push(PairOverlap {
                seed_a: seeds[i],
                seed_b: seeds[j],
                jaccard: top_n_jaccard(&rankings[i], &rankings[j], top_n),
                spearman: spearman(&rankings[i], &rankings[j], model.config()),
            });
        }
    }
    let m = pairs.len() as f64;
    Ok(StabilityReport {
        top_n,
        noise: *noise,
        mean_jaccard: pairs.iter().map(|p| p.jaccard).sum::<f64>() / m,
        min_jaccard: pairs.iter().map(|p| p.jaccard).fold(1.0, f64::min),
        mean_spearman: pairs.iter().map(|p| p.spearman).sum::<f64>() / m,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_model, tokenize, ModelBundle};
    use crate::neuron::SiteKind;

    fn model() -> ModelBundle {
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_mlp: 24,
            vocab_size: 256,
            max_seq_len: 64,
            norm_eps: 1e-5,
            tie_embeddings: false,
        };
        generate_model(&cfg, 21).unwrap()
    }

    fn noise(k: usize, seed: u64) -> NoiseConfig {
        NoiseConfig {
            alpha: 5.0,
            k_samples: k,
            seed,
            reduction: PositionReduction::Mean,
        }
    }

    #[test]
    fn same_seed_same_ranking() {
        let m = model();
        let toks = tokenize("reproducible", m.config()).unwrap();
        let a = score_neurons(&m, &toks, &noise(1, 9)).unwrap();
        let b = score_neurons(&m, &toks, &noise(1, 9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), neuron_count(m.config()));
        assert!(a.entries.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(a.entries.iter().all(|e| e.score >= 0.0));
    }

    #[test]
    fn dead_neuron_scores_zero_and_ranks_last() {
        let m = model()
            .with_tensor_edit("layers.1.gate_proj", |t| t.data[7 * 16..8 * 16].fill(0.0))
            .unwrap()
            .with_tensor_edit("layers.1.up_proj", |t| t.data[7 * 16..8 * 16].fill(0.0))
            .unwrap();
        let toks = tokenize("dead neuron probe", m.config()).unwrap();
        let r = score_neurons(&m, &toks, &noise(4, 1)).unwrap();
        let last = r.entries.last().unwrap();
        assert_eq!(last.neuron, NeuronId::new(1, SiteKind::MlpAct, 7));
        assert_eq!(last.score, 0.0);
    }

    #[test]
    fn k_sample_score_is_mean_of_iterations() {
        let m = model();
        let toks = tokenize("accumulate", m.config()).unwrap();
        let cfg = noise(6, 3);
        let ranking = score_neurons(&m, &toks, &cfg).unwrap();
        let emb = m.embed(&toks).unwrap();
        let clean = m.forward(&emb, &[], &SiteId::all(m.config())).unwrap().tape;
        let singles: Vec<Vec<f64>> = (0..6)
            .map(|i| iteration_scores(&m, &emb, &clean, &cfg, i).unwrap())
            .collect();
        let scores = ranking.canonical_scores(m.config());
        for (j, s) in scores.iter().enumerate() {
            let mean = singles.iter().map(|v| v[j]).sum::<f64>() / 6.0;
            assert!((s - mean).abs() <= 1e-9);
        }
    }

    #[test]
    fn reductions() {
        let xs = [1.0, 4.0, 2.0];
        assert_eq!(
            PositionReduction::Mean.reduce(xs.iter().copied()),
            7.0 / 3.0
        );
        assert_eq!(PositionReduction::Max.reduce(xs.iter().copied()), 4.0);
        assert_eq!(PositionReduction::Last.reduce(xs.iter().copied()), 2.0);
    }

    #[test]
    fn stability_with_forced_identical_seeds() {
        let m = model();
        let toks = tokenize("stable?", m.config()).unwrap();
        let r = ranking_stability(&m, &toks, &noise(2, 0), &[5, 5], 10).unwrap();
        assert_eq!(r.pairs.len(), 1);
        assert_eq!(r.mean_jaccard, 1.0);
        assert!((r.mean_spearman - 1.0).abs() < 1e-12);

        let all = neuron_count(m.config());
        let r = ranking_stability(&m, &toks, &noise(1, 0), &[1, 2, 3], all).unwrap();
        assert_eq!(r.min_jaccard, 1.0);
        assert!(matches!(
            ranking_stability(&m, &toks, &noise(1, 0), &[1], 3),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn invalid_noise_rejected() {
        let m = model();
        let toks = tokenize("x y", m.config()).unwrap();
        assert!(matches!(
            score_neurons(&m, &toks, &noise(0, 0)),
            Err(Error::Config(_))
        ));
        let bad = NoiseConfig {
            alpha: 0.0,
            ..noise(1, 0)
        };
        assert!(matches!(
            score_neurons(&m, &toks, &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn csv_columns() {
        let m = model();
        let r = ImportanceRanking::from_scores(
            m.config(),
            &vec![1.0; neuron_count(m.config())],
            StrategyId::ActMag,
            0,
        )
        .unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("layer,site,index,score,rank"));
        assert_eq!(lines.next(), Some("0,mlp_down_out,0,1,1"));
    }
}
