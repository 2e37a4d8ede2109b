//! Comparison rankings (random, activation magnitude, finite-difference
//! gradient magnitude) and masking curves for every strategy.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::{score_neurons, ImportanceRanking, NoiseConfig, PositionReduction};
use crate::metrics::{corpus_perplexity, perplexity_with};
use crate::model::{LanguageModel, ModelConfig, TokenSequence};
use crate::neuron::{enumerate_neurons, InterventionSpec, SiteId};
use crate::report::{f64_or_inf, fmt_f64, probe_hash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    Random,
    ActMag,
    GradMag,
    Perturbation,
}

impl StrategyId {
    pub const ALL: [StrategyId; 4] = [
        StrategyId::Random,
        StrategyId::ActMag,
        StrategyId::GradMag,
        StrategyId::Perturbation,
    ];

    /// Short CLI name.
    pub fn short_name(self) -> &'static str {
        match self {
            StrategyId::Random => "random",
            StrategyId::ActMag => "am",
            StrategyId::GradMag => "gm",
            StrategyId::Perturbation => "perturb",
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for StrategyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(StrategyId::Random),
            "am" | "act_mag" => Ok(StrategyId::ActMag),
            "gm" | "grad_mag" => Ok(StrategyId::GradMag),
            "perturb" | "perturbation" => Ok(StrategyId::Perturbation),
            other => Err(Error::Input(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Uniform random permutation of the neuron space; scores are all zero.
pub fn rank_random(config: &ModelConfig, seed: u64, model_hash: u64) -> Result<ImportanceRanking> {
    config.validate()?;
    let mut order = enumerate_neurons(config);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(ImportanceRanking::from_order(
        order,
        StrategyId::Random,
        model_hash,
    ))
}

/// Position-mean of `|activation|` from one clean forward.
pub fn rank_activation_magnitude<M: LanguageModel + ?Sized>(
    model: &M,
    tokens: &TokenSequence,
) -> Result<ImportanceRanking> {
    let config = model.config();
    let sites = SiteId::all(config);
    let tape = model.forward(&model.embed(tokens)?, &[], &sites)?.tape;
    let mut scores = Vec::new();
    for site in &sites {
        let act = tape
            .get(*site)
            .ok_or_else(|| Error::Addressing(format!("tape is missing {site}")))?;
        for c in 0..act.cols() {
            scores.push(
                PositionReduction::Mean
                    .reduce((0..act.rows()).map(|t| (act.get(t, c) as f64).abs())),
            );
        }
    }
    let mut r =
        ImportanceRanking::from_scores(config, &scores, StrategyId::ActMag, model.content_hash())?;
    r.probe_hash = Some(probe_hash(tokens));
    Ok(r)
}

pub const DEFAULT_GM_STEP: f64 = 1e-3;

/// Central finite difference of mean NLL with respect to an additive shift
/// applied to one channel at every position:
/// `|NLL(+h) - NLL(-h)| / 2h`. Costs exactly `2 |N|` forwards.
pub fn rank_gradient_magnitude<M: LanguageModel + ?Sized>(
    model: &M,
    tokens: &TokenSequence,
    h: f64,
) -> Result<ImportanceRanking> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let config = model.config();
    let scores = enumerate_neurons(config)
        .par_iter()
        .map(|&n| {
            let plus = perplexity_with(model, tokens, &[InterventionSpec::shift([n], h as f32)])?;
            let minus = perplexity_with(model, tokens, &[InterventionSpec::shift([n], -h as f32)])?;
            Ok((plus.mean_nll - minus.mean_nll).abs() / (2.0 * h))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut r =
        ImportanceRanking::from_scores(config, &scores, StrategyId::GradMag, model.content_hash())?;
    r.probe_hash = Some(probe_hash(tokens));
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSettings {
    pub n_max: usize,
    pub step: usize,
    /// Only RANDOM uses more than one trial.
    pub trials: usize,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub gm_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyPoint {
    pub n: usize,
    #[serde(with = "f64_or_inf")]
    pub mean_ppl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyCurve {
    pub strategy: StrategyId,
    pub trials: usize,
    pub points: Vec<StrategyPoint>,
}

impl StrategyCurve {
    /// CSV with columns `n,mean_ppl,trials`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "mean_ppl", "trials"])?;
        for p in &self.points {
            out.write_record([
                p.n.to_string(),
                fmt_f64(p.mean_ppl),
                self.trials.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Geometric mean; identical inputs come back unchanged.
fn log_space_mean(values: &[f64]) -> f64 {
    if values.windows(2).all(|w| w[0].to_bits() == w[1].to_bits()) {
        return values[0];
    }
    if values.iter().any(|v| v.is_infinite()) {
        return f64::INFINITY;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

/// The ranking a strategy masks in order. `trial` only affects RANDOM.
pub fn strategy_ranking<M: LanguageModel + ?Sized>(
    model: &M,
    probe: &TokenSequence,
    strategy: StrategyId,
    settings: &CurveSettings,
    trial: usize,
) -> Result<ImportanceRanking> {
    match strategy {
        StrategyId::Random => rank_random(
            model.config(),
            settings.seed.wrapping_add(trial as u64),
            model.content_hash(),
        ),
        StrategyId::ActMag => rank_activation_magnitude(model, probe),
        StrategyId::GradMag => rank_gradient_magnitude(model, probe, settings.gm_step),
        StrategyId::Perturbation => score_neurons(model, probe, &settings.noise),
    }
}

/// Rankings come from `probe`; perplexity is measured on `eval_set`
/// (token-weighted when it has several sequences). RANDOM trials are
/// averaged in log space.
pub fn strategy_curve<M: LanguageModel + ?Sized>(
    model: &M,
    probe: &TokenSequence,
    eval_set: &[TokenSequence],
    strategy: StrategyId,
    settings: &CurveSettings,
) -> Result<StrategyCurve> {
    if settings.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if settings.step == 0 {
        return Err(Error::Config("step must be at least 1".into()));
    }
    let trials = if strategy == StrategyId::Random {
        settings.trials
    } else {
        1
    };
    let rankings = (0..trials)
        .map(|t| strategy_ranking(model, probe, strategy, settings, t))
        .collect::<Result<Vec<_>>>()?;
    curve_from_rankings(
        model,
        eval_set,
        strategy,
        &rankings,
        settings.n_max,
        settings.step,
    )
}

/// Masking curve averaged over pre-computed rankings.
pub fn curve_from_rankings<M: LanguageModel + ?Sized>(
    model: &M,
    eval_set: &[TokenSequence],
    strategy: StrategyId,
    rankings: &[ImportanceRanking],
    n_max: usize,
    step: usize,
) -> Result<StrategyCurve> {
    for r in rankings {
        r.check_covers(model.config())?;
        if n_max > r.len() {
            return Err(Error::Config(format!(
                "n_max {n_max} exceeds {} neurons",
                r.len()
            )));
        }
    }
    let clean = corpus_perplexity(model, eval_set, &[])?.ppl;
    let ns: Vec<usize> = (step..=n_max).step_by(step).collect();
    let mut points = vec![StrategyPoint {
        n: 0,
        mean_ppl: clean,
    }];
    let rest = ns
        .par_iter()
        .map(|&n| {
            let per_trial = rankings
                .iter()
                .map(|r| {
                    corpus_perplexity(model, eval_set, &[InterventionSpec::mask(r.top(n))])
                        .map(|p| p.ppl)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(StrategyPoint {
                n,
                mean_ppl: log_space_mean(&per_trial),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.extend(rest);
    Ok(StrategyCurve {
        strategy,
        trials: rankings.len(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_model, tokenize, CountingModel, ModelBundle};
    use crate::neuron::{neuron_count, NeuronId, SiteKind};
    use std::collections::BTreeSet;

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
        generate_model(&cfg, 23).unwrap()
    }

    #[test]
    fn random_is_seeded_bijection() {
        let m = model();
        let a = rank_random(m.config(), 1, 0).unwrap();
        let b = rank_random(m.config(), 1, 0).unwrap();
        let c = rank_random(m.config(), 2, 0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.top(32), c.top(32));
        let set: BTreeSet<NeuronId> = a.neurons().collect();
        assert_eq!(set.len(), neuron_count(m.config()));
        assert!(a.entries.iter().all(|e| e.score == 0.0));
        a.check_covers(m.config()).unwrap();
    }

    #[test]
    fn activation_magnitude_dead_neuron() {
        let m = model()
            .with_tensor_edit("layers.0.gate_proj", |t| t.data[3 * 8..4 * 8].fill(0.0))
            .unwrap()
            .with_tensor_edit("layers.0.up_proj", |t| t.data[3 * 8..4 * 8].fill(0.0))
            .unwrap();
        let toks = tokenize("magnitude", m.config()).unwrap();
        let r = rank_activation_magnitude(&m, &toks).unwrap();
        assert_eq!(r.score_of(NeuronId::new(0, SiteKind::MlpAct, 3)), Some(0.0));
        assert_eq!(r, rank_activation_magnitude(&m, &toks).unwrap());
    }

    #[test]
    fn gradient_magnitude_cost_and_dead_channel() {
        // Channel 5 of the MLP hidden state has neither incoming nor outgoing
        // weights, so no shift of it can reach the logits.
        let m = model()
            .with_tensor_edit("layers.0.gate_proj", |t| t.data[5 * 8..6 * 8].fill(0.0))
            .unwrap()
            .with_tensor_edit("layers.0.up_proj", |t| t.data[5 * 8..6 * 8].fill(0.0))
            .unwrap()
            .with_tensor_edit("layers.0.down_proj", |t| {
                for row in t.data.chunks_exact_mut(16) {
                    row[5] = 0.0;
                }
            })
            .unwrap();
        let toks = tokenize("gradient", m.config()).unwrap();
        let counter = CountingModel::new(&m);
        let r = rank_gradient_magnitude(&counter, &toks, DEFAULT_GM_STEP).unwrap();
        assert_eq!(counter.forwards(), 2 * neuron_count(m.config()));
        assert!(
            r.score_of(NeuronId::new(0, SiteKind::MlpAct, 5))
                .unwrap()
                .abs()
                <= 1e-9
        );
        assert!(r.entries[0].score > 0.0);
    }

    #[test]
    fn log_mean_identity_and_geometric() {
        assert_eq!(log_space_mean(&[3.7, 3.7, 3.7]), 3.7);
        assert!((log_space_mean(&[1.0, 100.0]) - 10.0).abs() < 1e-12);
        assert!(log_space_mean(&[1.0, f64::INFINITY]).is_infinite());
    }

    #[test]
    fn curves_share_clean_point() {
        let m = model();
        let toks = tokenize("shared clean point", m.config()).unwrap();
        let settings = CurveSettings {
            n_max: 6,
            step: 2,
            trials: 3,
            seed: 4,
            noise: NoiseConfig {
                k_samples: 4,
                ..NoiseConfig::default()
            },
            gm_step: DEFAULT_GM_STEP,
        };
        let eval = [toks.clone()];
        let curves: Vec<StrategyCurve> = StrategyId::ALL
            .iter()
            .map(|&s| strategy_curve(&m, &toks, &eval, s, &settings).unwrap())
            .collect();
        let clean = crate::metrics::perplexity(&m, &toks, None).unwrap().ppl;
        for c in &curves {
            assert_eq!(c.points[0].mean_ppl, clean);
            assert_eq!(c.points.len(), 4);
        }
        assert_eq!(curves[0].trials, 3);
        assert_eq!(curves[1].trials, 1);
    }

    #[test]
    fn strategy_names() {
        for s in StrategyId::ALL {
            assert_eq!(s.short_name().parse::<StrategyId>().unwrap(), s);
        }
        assert!("nope".parse::<StrategyId>().is_err());
    }
}
