//! Greedy prefix search for the smallest critical set, the exhaustive
//! small-pool oracle, and phase curves.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::StrategyId;
use crate::error::{Error, Result};
use crate::importance::{ImportanceRanking, NoiseConfig, PositionReduction};
use crate::metrics::{perplexity, Degradation, PerplexityReport};
use crate::model::{LanguageModel, ModelConfig, TokenSequence};
use crate::neuron::{neuron_count, InterventionSpec, NeuronId};
use crate::report::{f64_or_inf, fmt_f64, hex64, probe_hash};

pub const DEFAULT_BUDGET: usize = 1000;
pub const MAX_ORACLE_POOL: usize = 20;
pub const MAX_ORACLE_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub epsilon: f64,
    pub step: usize,
    pub max_n: usize,
}

impl SearchConfig {
    /// `epsilon = 1`, `step = 1`, `max_n = min(|N|, 1000)`.
    pub fn defaults_for(config: &ModelConfig) -> Self {
        Self {
            epsilon: 1.0,
            step: 1,
            max_n: neuron_count(config).min(DEFAULT_BUDGET),
        }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.step == 0 {
            return Err(Error::Config("step must be at least 1".into()));
        }
        let n = neuron_count(config);
        if self.max_n == 0 || self.max_n > n {
            return Err(Error::Config(format!(
                "max_n must be in 1..={n}, got {}",
                self.max_n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    #[serde(with = "f64_or_inf")]
    pub delta: f64,
    #[serde(with = "f64_or_inf")]
    pub ppl_masked: f64,
}

/// Everything needed to rerun a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub strategy: StrategyId,
    pub noise: Option<NoiseConfig>,
    pub search: SearchConfig,
    pub position_reduction: PositionReduction,
    pub probe_hash: String,
    pub probe_tokens: usize,
    pub model_hash: String,
    /// Number of scored transitions per sequence is `T - 1`.
    pub predicted_positions: String,
    pub neuron_space: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalSetReport {
    pub critical_set: Vec<NeuronId>,
    /// `None` when the budget ran out first.
    pub n_star: Option<usize>,
    #[serde(with = "f64_or_inf")]
    pub delta_at_n_star: f64,
    #[serde(with = "f64_or_inf")]
    pub ppl_original: f64,
    #[serde(with = "f64_or_inf")]
    pub ppl_masked: f64,
    pub ppl_masked_infinite: bool,
    pub converged: bool,
    /// Forward evaluations performed, clean one included.
    pub evaluations: usize,
    /// Points `n = step, 2*step, ...` up to `n_star` (or the budget).
    pub phase_curve: Vec<CurvePoint>,
    pub config: RunEcho,
}

impl CriticalSetReport {
    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub(crate) fn echo(
    ranking: &ImportanceRanking,
    tokens: &TokenSequence,
    model_hash: u64,
    search: SearchConfig,
) -> RunEcho {
    RunEcho {
        strategy: ranking.strategy,
        noise: ranking.noise,
        search,
        position_reduction: ranking.reduction,
        probe_hash: hex64(probe_hash(tokens)),
        probe_tokens: tokens.len(),
        model_hash: hex64(model_hash),
        predicted_positions: "T-1".into(),
        neuron_space: "per layer: mlp_down_out, mlp_act, attn_o_out channels; embedding and norm channels excluded".into(),
    }
}

fn masked_point<M: LanguageModel + ?Sized>(
    model: &M,
    tokens: &TokenSequence,
    clean: &PerplexityReport,
    neurons: &[NeuronId],
) -> Result<(CurvePoint, Degradation)> {
    let masked = perplexity(
        model,
        tokens,
        Some(&InterventionSpec::mask(neurons.iter().copied())),
    )?;
    let d = Degradation::between(clean, &masked);
    Ok((
        CurvePoint {
            n: neurons.len(),
            delta: d.delta,
            ppl_masked: masked.ppl,
        },
        d,
    ))
}

/// Masks the top-`n` prefix for `n = step, 2*step, ...` and stops at the
/// first `n` whose degradation reaches `epsilon`.
pub fn greedy_search<M: LanguageModel + ?Sized>(
    model: &M,
    tokens: &TokenSequence,
    ranking: &ImportanceRanking,
    cfg: &SearchConfig,
) -> Result<CriticalSetReport> {
    let config = model.config();
    cfg.validate(config)?;
    ranking.check_covers(config)?;

    let clean = perplexity(model, tokens, None)?;
    let mut evaluations = 1;
    let mut curve = Vec::new();
    let mut hit = None;
    let mut n = cfg.step;
    while n <= cfg.max_n {
        let prefix = ranking.top(n);
        let (point, d) = masked_point(model, tokens, &clean, &prefix)?;
        evaluations += 1;
        curve.push(point);
        if d.crosses(cfg.epsilon) {
            hit = Some((n, prefix, d));
            break;
        }
        n += cfg.step;
    }

    let config_echo = echo(ranking, tokens, model.content_hash(), *cfg);
    Ok(match hit {
        Some((n, set, d)) => CriticalSetReport {
            critical_set: set,
            n_star: Some(n),
            delta_at_n_star: d.delta,
            ppl_original: clean.ppl,
            ppl_masked: curve.last().map(|p| p.ppl_masked).unwrap_or(f64::NAN),
            ppl_masked_infinite: d.infinite,
            converged: true,
            evaluations,
            phase_curve: curve,
            config: config_echo,
        },
        None => {
            let last = curve.last().copied();
            CriticalSetReport {
                critical_set: Vec::new(),
                n_star: None,
                delta_at_n_star: last.map(|p| p.delta).unwrap_or(0.0),
                ppl_original: clean.ppl,
                ppl_masked: last.map(|p| p.ppl_masked).unwrap_or(clean.ppl),
                ppl_masked_infinite: false,
                converged: false,
                evaluations,
                phase_curve: curve,
                config: config_echo,
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub n: usize,
    #[serde(with = "f64_or_inf")]
    pub ppl: f64,
    #[serde(with = "f64_or_inf")]
    pub delta: f64,
}

/// Degradation for every prefix `n = 0, step, 2*step, ... <= n_max`, no
/// early stop. The `n = 0` point is the clean model (`delta = 0`).
pub fn phase_curve<M: LanguageModel + ?Sized>(
    model: &M,
    tokens: &TokenSequence,
    ranking: &ImportanceRanking,
    n_max: usize,
    step: usize,
) -> Result<Vec<PhasePoint>> {
    if step == 0 {
        return Err(Error::Config("step must be at least 1".into()));
    }
    if n_max > ranking.len() {
        return Err(Error::Config(format!(
            "n_max {n_max} exceeds the {} ranked neurons",
            ranking.len()
        )));
    }
    ranking.check_covers(model.config())?;
    let clean = perplexity(model, tokens, None)?;
    let ns: Vec<usize> = (step..=n_max).step_by(step).collect();
    let points = ns
        .par_iter()
        .map(|&n| {
            let (p, _) = masked_point(model, tokens, &clean, &ranking.top(n))?;
            Ok(PhasePoint {
                n,
                ppl: p.ppl_masked,
                delta: p.delta,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(points.len() + 1);
    out.push(PhasePoint {
        n: 0,
        ppl: clean.ppl,
        delta: 0.0,
    });
    out.extend(points);
    Ok(out)
}

/// CSV with columns `n,ppl_masked,delta`.
pub fn write_phase_csv<W: Write>(points: &[PhasePoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "ppl_masked", "delta"])?;
    for p in points {
        out.write_record([p.n.to_string(), fmt_f64(p.ppl), fmt_f64(p.delta)])?;
    }
    out.flush()?;
    Ok(())
}

impl CriticalSetReport {
    /// Greedy curve as CSV rows, prefixed by the clean `n = 0` point.
    pub fn phase_points(&self) -> Vec<PhasePoint> {
        std::iter::once(PhasePoint {
            n: 0,
            ppl: self.ppl_original,
            delta: 0.0,
        })
        .chain(self.phase_curve.iter().map(|p| PhasePoint {
            n: p.n,
            ppl: p.ppl_masked,
            delta: p.delta,
        }))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveResult {
    pub size: usize,
    pub witness: Vec<NeuronId>,
    #[serde(with = "f64_or_inf")]
    pub delta: f64,
    pub evaluations: usize,
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Smallest subset of `pool` (size `1..=max_size`) whose masking reaches
/// `epsilon`, searched size-first then lexicographically by pool position.
/// Returns the first witness found, or `None`.
pub fn exhaustive_min_set<M: LanguageModel + ?Sized>(
    model: &M,
    tokens: &TokenSequence,
    pool: &[NeuronId],
    max_size: usize,
    epsilon: f64,
) -> Result<Option<ExhaustiveResult>> {
    if pool.len() > MAX_ORACLE_POOL {
        return Err(Error::Budget(format!(
            "candidate pool of {} exceeds {MAX_ORACLE_POOL}",
            pool.len()
        )));
    }
    if max_size > MAX_ORACLE_SIZE {
        return Err(Error::Budget(format!(
            "max_size {max_size} exceeds {MAX_ORACLE_SIZE}"
        )));
    }
    for n in pool {
        n.validate(model.config())?;
    }
    if pool.is_empty() {
        return Ok(None);
    }
    let clean = perplexity(model, tokens, None)?;
    let mut evaluations = 1;
    for size in 1..=max_size.min(pool.len()) {
        let subsets = combinations(pool.len(), size);
        let deltas = subsets
            .par_iter()
            .map(|s| {
                let set: Vec<NeuronId> = s.iter().map(|&i| pool[i]).collect();
                masked_point(model, tokens, &clean, &set).map(|(_, d)| d)
            })
            .collect::<Result<Vec<_>>>()?;
        evaluations += subsets.len();
        if let Some(i) = deltas.iter().position(|d| d.crosses(epsilon)) {
            return Ok(Some(ExhaustiveResult {
                size,
                witness: subsets[i].iter().map(|&j| pool[j]).collect(),
                delta: deltas[i].delta,
                evaluations,
            }));
        }
    }
    Ok(None)
}

/// Smallest `n` such that masking `ordered[..n]` reaches `epsilon`.
pub fn prefix_crossing<M: LanguageModel + ?Sized>(
    model: &M,
    tokens: &TokenSequence,
    ordered: &[NeuronId],
    epsilon: f64,
) -> Result<Option<usize>> {
    let clean = perplexity(model, tokens, None)?;
    for n in 1..=ordered.len() {
        let (_, d) = masked_point(model, tokens, &clean, &ordered[..n])?;
        if d.crosses(epsilon) {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::importance::score_neurons;
    use crate::metrics::degradation;
    use crate::model::{generate_model, tokenize, CountingModel, ModelBundle};
    use crate::neuron::{enumerate_neurons, SiteKind};

    fn model() -> ModelBundle {
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_mlp: 16,
            vocab_size: 256,
            max_seq_len: 64,
            norm_eps: 1e-5,
            tie_embeddings: false,
        };
        generate_model(&cfg, 17).unwrap()
    }

    fn ranking(m: &ModelBundle, toks: &TokenSequence) -> ImportanceRanking {
        score_neurons(
            m,
            toks,
            &NoiseConfig {
                k_samples: 8,
                ..NoiseConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn combination_order() {
        assert_eq!(
            combinations(4, 2),
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        assert_eq!(combinations(20, 4).len(), 4845);
        assert!(combinations(2, 3).is_empty());
    }

    #[test]
    fn tiny_epsilon_stops_at_one() {
        let m = model();
        let toks = tokenize("greedy search probe", m.config()).unwrap();
        let r = ranking(&m, &toks);
        let cfg = SearchConfig {
            epsilon: 1e-12,
            ..SearchConfig::defaults_for(m.config())
        };
        let d1 = degradation(&m, &toks, &r.top(1)).unwrap();
        assert!(d1.delta > 0.0, "top-1 mask should raise ppl on this model");
        let rep = greedy_search(&m, &toks, &r, &cfg).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.n_star, Some(1));
        assert_eq!(rep.evaluations, 2);
    }

    #[test]
    fn budget_exhaustion_reports_full_curve() {
        let m = model();
        let toks = tokenize("budget", m.config()).unwrap();
        let r = ranking(&m, &toks);
        let cfg = SearchConfig {
            epsilon: 1e6,
            step: 2,
            max_n: 10,
        };
        let counter = CountingModel::new(&m);
        let rep = greedy_search(&counter, &toks, &r, &cfg).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.n_star, None);
        assert_eq!(rep.phase_curve.len(), 5);
        assert_eq!(counter.forwards(), 6);
        let ns: Vec<usize> = rep.phase_curve.iter().map(|p| p.n).collect();
        assert_eq!(ns, vec![2, 4, 6, 8, 10]);
    }

    #[test]
    fn greedy_curve_is_prefix_of_phase_curve() {
        let m = model();
        let toks = tokenize("prefix relation", m.config()).unwrap();
        let r = ranking(&m, &toks);
        let cfg = SearchConfig {
            epsilon: 0.05,
            step: 1,
            max_n: 32,
        };
        let rep = greedy_search(&m, &toks, &r, &cfg).unwrap();
        let full = phase_curve(&m, &toks, &r, 32, 1).unwrap();
        assert_eq!(full[0].delta, 0.0);
        assert_eq!(full[0].n, 0);
        assert_eq!(
            rep.phase_points(),
            full[..rep.phase_curve.len() + 1].to_vec()
        );
        if rep.converged {
            let n = rep.n_star.unwrap();
            assert!(rep.delta_at_n_star >= cfg.epsilon);
            if n > 1 {
                assert!(full[n - 1].delta < cfg.epsilon);
            }
        }
    }

    #[test]
    fn mismatched_ranking_is_addressing_error() {
        let m = model();
        let toks = tokenize("mismatch", m.config()).unwrap();
        let mut r = ranking(&m, &toks);
        r.entries.pop();
        assert!(matches!(
            greedy_search(&m, &toks, &r, &SearchConfig::defaults_for(m.config())),
            Err(Error::Addressing(_))
        ));
    }

    #[test]
    fn exhaustive_edges() {
        let m = model();
        let toks = tokenize("exhaustive", m.config()).unwrap();
        assert_eq!(exhaustive_min_set(&m, &toks, &[], 3, 0.1).unwrap(), None);
        let big: Vec<NeuronId> = enumerate_neurons(m.config()).into_iter().take(21).collect();
        assert!(matches!(
            exhaustive_min_set(&m, &toks, &big, 2, 0.1),
            Err(Error::Budget(_))
        ));
        assert!(matches!(
            exhaustive_min_set(&m, &toks, &big[..4], 5, 0.1),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn dead_pool_never_qualifies() {
        let m = model()
            .with_tensor_edit("layers.0.gate_proj", |t| t.data[..8 * 8].fill(0.0))
            .unwrap()
            .with_tensor_edit("layers.0.up_proj", |t| t.data[..8 * 8].fill(0.0))
            .unwrap();
        let toks = tokenize("dead pool", m.config()).unwrap();
        let pool: Vec<NeuronId> = (0..8)
            .map(|i| NeuronId::new(0, SiteKind::MlpAct, i))
            .collect();
        assert_eq!(
            exhaustive_min_set(&m, &toks, &pool, 3, 1e-12).unwrap(),
            None
        );
    }

    #[test]
    fn exhaustive_not_larger_than_greedy_on_pool() {
        let m = model();
        let toks = tokenize("oracle dominance", m.config()).unwrap();
        let r = ranking(&m, &toks);
        let pool = r.top(8);
        let ex = exhaustive_min_set(&m, &toks, &pool, 3, 1e-12)
            .unwrap()
            .unwrap();
        let greedy = prefix_crossing(&m, &toks, &pool, 1e-12).unwrap().unwrap();
        assert!(ex.size <= greedy);
    }
}
