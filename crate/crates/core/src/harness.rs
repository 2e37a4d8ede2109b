//! Experiment runners: end-to-end identification, sweeps, threshold tables
//! and corpus evaluation.
//!
//! The in-memory functions (`identify`, `beta_sweep`, ...) take a loaded
//! model and token sequences. The `run_*` functions resolve an
//! [`ExperimentConfig`] from disk and are what the CLI calls.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{strategy_curve, CurveSettings, StrategyCurve, StrategyId, DEFAULT_GM_STEP};
use crate::error::{Error, Result};
use crate::importance::{score_neurons, ImportanceRanking, NoiseConfig, PositionReduction};
use crate::metrics::{corpus_perplexity, load_corpus, perplexity, Degradation};
use crate::model::{load_model, tokenize, LanguageModel, ModelBundle, ModelConfig, TokenSequence};
use crate::neuron::{neuron_count, InterventionSpec, NeuronId, SiteKind};
use crate::report::{f64_or_inf, fmt_f64, hash_bytes, hash_json, hex64, probe_hash};
use crate::search::{
    greedy_search, phase_curve, write_phase_csv, CriticalSetReport, PhasePoint, SearchConfig,
    DEFAULT_BUDGET,
};

pub const DEFAULT_BETAS: [f32; 8] = [1.0, 0.0, -5.0, -1.0, 0.3, 0.5, 0.8, 5.0];
pub const DEFAULT_EPSILONS: [f64; 6] = [0.8, 1.0, 2.0, 3.0, 10.0, 20.0];
pub const DEFAULT_ALPHAS: [f64; 8] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
pub const DEFAULT_KS: [usize; 12] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120];

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything a run needs. Field names match the CLI flags, so a JSON
/// config file and the command line share one vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Option<PathBuf>,
    pub probe: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    /// Nested prefixes, one per line, for the token-length sweep.
    pub prefixes: Option<PathBuf>,
    pub out_dir: PathBuf,

    pub alpha: f64,
    pub samples: usize,
    pub seed: u64,
    pub reduction: PositionReduction,
    pub epsilon: f64,
    pub step: usize,
    /// Largest prefix greedy search may try; `None` means `min(|N|, 1000)`.
    pub budget: Option<usize>,

    pub alphas: Vec<f64>,
    pub ks: Vec<usize>,
    pub betas: Vec<f32>,
    pub epsilons: Vec<f64>,
    /// Byte-prefix lengths cut from the longest prefix line (or the probe).
    pub lengths: Vec<usize>,

    pub n_max: Option<usize>,
    pub trials: usize,
    pub gm_step: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let noise = NoiseConfig::default();
        Self {
            model: None,
            probe: None,
            corpus: None,
            prefixes: None,
            out_dir: PathBuf::from("out"),
            alpha: noise.alpha,
            samples: noise.k_samples,
            seed: noise.seed,
            reduction: noise.reduction,
            epsilon: 1.0,
            step: 1,
            budget: None,
            alphas: DEFAULT_ALPHAS.to_vec(),
            ks: DEFAULT_KS.to_vec(),
            betas: DEFAULT_BETAS.to_vec(),
            epsilons: DEFAULT_EPSILONS.to_vec(),
            lengths: Vec::new(),
            n_max: None,
            trials: 10,
            gm_step: DEFAULT_GM_STEP,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = read(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig {
            alpha: self.alpha,
            k_samples: self.samples,
            seed: self.seed,
            reduction: self.reduction,
        }
    }

    pub fn search_for(&self, config: &ModelConfig) -> SearchConfig {
        SearchConfig {
            epsilon: self.epsilon,
            step: self.step,
            max_n: self
                .budget
                .unwrap_or_else(|| neuron_count(config).min(DEFAULT_BUDGET)),
        }
    }

    fn required<'a>(&self, path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        let p = path
            .as_deref()
            .ok_or_else(|| Error::Config(format!("{what} path is required")))?;
        if !p.exists() {
            return Err(Error::Config(format!(
                "{what} path {} does not exist",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn load_model(&self) -> Result<ModelBundle> {
        load_model(self.required(&self.model, "model")?)
    }

    pub fn load_probe(&self, config: &ModelConfig) -> Result<TokenSequence> {
        let text = read(self.required(&self.probe, "probe")?)?;
        tokenize(text.trim_end_matches(['\n', '\r']), config)
    }

    pub fn load_corpus(&self, config: &ModelConfig) -> Result<Option<Vec<TokenSequence>>> {
        match &self.corpus {
            None => Ok(None),
            Some(_) => Ok(Some(load_corpus(
                self.required(&self.corpus, "corpus")?,
                config,
            )?)),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::File {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Order-independent: the set is sorted canonically before hashing.
fn set_hash(set: &[NeuronId]) -> Result<String> {
    let mut sorted = set.to_vec();
    sorted.sort();
    Ok(hex64(hash_json(&sorted)?))
}

/// Hashes and settings that let a table be regenerated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEcho {
    pub model_hash: String,
    pub probe_hash: String,
    pub probe_tokens: usize,
    pub noise: NoiseConfig,
    pub search: SearchConfig,
}

impl SweepEcho {
    pub fn new<M: LanguageModel + ?Sized>(
        model: &M,
        probe: &TokenSequence,
        noise: NoiseConfig,
        search: SearchConfig,
    ) -> Self {
        Self {
            model_hash: hex64(model.content_hash()),
            probe_hash: hex64(probe_hash(probe)),
            probe_tokens: probe.len(),
            noise,
            search,
        }
    }
}

// ---------------------------------------------------------------- layers

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub layer: usize,
    pub mlp_down_out: usize,
    pub mlp_act: usize,
    pub attn_o_out: usize,
}

impl LayerCount {
    pub fn down(&self) -> usize {
        self.mlp_down_out
    }

    pub fn other(&self) -> usize {
        self.mlp_act + self.attn_o_out
    }

    pub fn total(&self) -> usize {
        self.down() + self.other()
    }
}

/// Where a critical set lives, one row per layer (empty layers included).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDistribution {
    pub layers: Vec<LayerCount>,
}

impl LayerDistribution {
    pub fn of(config: &ModelConfig, set: &[NeuronId]) -> Self {
        let mut layers: Vec<LayerCount> = (0..config.n_layers)
            .map(|layer| LayerCount {
                layer,
                ..Default::default()
            })
            .collect();
        for n in set {
            let row = &mut layers[n.layer];
            match n.site {
                SiteKind::MlpDownOut => row.mlp_down_out += 1,
                SiteKind::MlpAct => row.mlp_act += 1,
                SiteKind::AttnOOut => row.attn_o_out += 1,
            }
        }
        Self { layers }
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(LayerCount::total).sum()
    }

    /// Columns `layer,mlp_down_out,mlp_act,attn_o_out,down,other,total`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &[
                "layer",
                "mlp_down_out",
                "mlp_act",
                "attn_o_out",
                "down",
                "other",
                "total",
            ],
            self.layers.iter().map(|c| {
                [
                    c.layer,
                    c.mlp_down_out,
                    c.mlp_act,
                    c.attn_o_out,
                    c.down(),
                    c.other(),
                    c.total(),
                ]
                .iter()
                .map(ToString::to_string)
                .collect()
            }),
        )
    }
}

// -------------------------------------------------------------- identify

/// Clean vs masked perplexity over an evaluation corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusEval {
    pub sequences: usize,
    pub predicted_tokens: usize,
    #[serde(with = "f64_or_inf")]
    pub ppl_original: f64,
    #[serde(with = "f64_or_inf")]
    pub ppl_masked: f64,
    pub masked_underflow: bool,
    #[serde(with = "f64_or_inf")]
    pub delta: f64,
    pub masked_neurons: usize,
}

pub fn evaluate_corpus<M: LanguageModel + ?Sized>(
    model: &M,
    corpus: &[TokenSequence],
    set: &[NeuronId],
) -> Result<CorpusEval> {
    let clean = corpus_perplexity(model, corpus, &[])?;
    let masked = if set.is_empty() {
        clean
    } else {
        corpus_perplexity(
            model,
            corpus,
            &[InterventionSpec::mask(set.iter().copied())],
        )?
    };
    Ok(CorpusEval {
        sequences: corpus.len(),
        predicted_tokens: clean.n_predicted,
        ppl_original: clean.ppl,
        ppl_masked: masked.ppl,
        masked_underflow: masked.underflow,
        delta: Degradation::between(&clean, &masked).delta,
        masked_neurons: set.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub ranking: ImportanceRanking,
    pub report: CriticalSetReport,
    pub layers: LayerDistribution,
    pub corpus: Option<CorpusEval>,
}

/// Stage 1 ranking followed by greedy search, plus an optional corpus check.
pub fn identify<M: LanguageModel + ?Sized>(
    model: &M,
    probe: &TokenSequence,
    noise: &NoiseConfig,
    search: &SearchConfig,
    corpus: Option<&[TokenSequence]>,
) -> Result<Identification> {
    if probe.len() < 2 {
        return Err(Error::Input("probe needs at least 2 tokens".into()));
    }
    search.validate(model.config())?;
    let ranking = score_neurons(model, probe, noise)?;
    let report = greedy_search(model, probe, &ranking, search)?;
    let layers = LayerDistribution::of(model.config(), &report.critical_set);
    let corpus = corpus
        .map(|c| evaluate_corpus(model, c, &report.critical_set))
        .transpose()?;
    Ok(Identification {
        ranking,
        report,
        layers,
        corpus,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub xxh64: String,
    pub bytes: usize,
}

/// Files in `dir` (manifest excluded) with their hashes, sorted by name.
pub fn write_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let listing = fs::read_dir(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut entries = Vec::new();
    for entry in listing {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == MANIFEST_FILE || !entry.file_type()?.is_file() {
            continue;
        }
        let bytes = fs::read(entry.path())?;
        entries.push(ManifestEntry {
            file: name,
            xxh64: hex64(hash_bytes(&bytes)),
            bytes: bytes.len(),
        });
    }
    entries.sort_by(|a, b| a.file.cmp(&b.file));
    let mut json = serde_json::to_vec_pretty(&entries)?;
    json.push(b'\n');
    write_file(&dir.join(MANIFEST_FILE), &json)?;
    Ok(entries)
}

/// Writes `report.json`, `phase_curve.csv`, `layer_distribution.csv`,
/// `ranking.csv`, `corpus_eval.json` (with a corpus) and finally
/// `manifest.json` into `cfg.out_dir`.
pub fn run_identify(cfg: &ExperimentConfig) -> Result<Identification> {
    let model = cfg.load_model()?;
    let probe = cfg.load_probe(model.config())?;
    let corpus = cfg.load_corpus(model.config())?;
    let id = identify(
        &model,
        &probe,
        &cfg.noise(),
        &cfg.search_for(model.config()),
        corpus.as_deref(),
    )?;

    let dir = &cfg.out_dir;
    write_file(
        &dir.join("report.json"),
        id.report.to_json_pretty()?.as_bytes(),
    )?;
    let mut curve = Vec::new();
    write_phase_csv(&id.report.phase_points(), &mut curve)?;
    write_file(&dir.join("phase_curve.csv"), &curve)?;
    write_file(&dir.join("layer_distribution.csv"), &id.layers.to_csv()?)?;
    let mut ranking = Vec::new();
    id.ranking.write_csv(&mut ranking)?;
    write_file(&dir.join("ranking.csv"), &ranking)?;
    if let Some(c) = &id.corpus {
        let mut json = serde_json::to_vec_pretty(c)?;
        json.push(b'\n');
        write_file(&dir.join("corpus_eval.json"), &json)?;
    }
    write_manifest(dir)?;
    Ok(id)
}

// ------------------------------------------------------------ phase curve

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCurve {
    pub echo: SweepEcho,
    pub points: Vec<PhasePoint>,
}

impl PhaseCurve {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        write_phase_csv(&self.points, &mut out)?;
        Ok(out)
    }
}

/// Full masking curve over the Stage 1 ranking, `n = 0..=n_max`.
pub fn run_phase_curve(cfg: &ExperimentConfig) -> Result<PhaseCurve> {
    let model = cfg.load_model()?;
    let probe = cfg.load_probe(model.config())?;
    let search = cfg.search_for(model.config());
    let n_max = cfg.n_max.unwrap_or(search.max_n);
    let ranking = score_neurons(&model, &probe, &cfg.noise())?;
    Ok(PhaseCurve {
        echo: SweepEcho::new(&model, &probe, cfg.noise(), search),
        points: phase_curve(&model, &probe, &ranking, n_max, cfg.step)?,
    })
}

// ------------------------------------------------------------------- beta

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta: f32,
    #[serde(with = "f64_or_inf")]
    pub ppl: f64,
    #[serde(with = "f64_or_inf")]
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSweep {
    pub model_hash: String,
    pub probe_hash: String,
    pub critical_set: Vec<NeuronId>,
    pub rows: Vec<BetaRow>,
}

impl BetaSweep {
    pub fn row(&self, beta: f32) -> Option<&BetaRow> {
        self.rows
            .iter()
            .find(|r| r.beta.to_bits() == beta.to_bits())
    }

    /// Columns `beta,ppl,delta`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &["beta", "ppl", "delta"],
            self.rows
                .iter()
                .map(|r| vec![r.beta.to_string(), fmt_f64(r.ppl), fmt_f64(r.delta)]),
        )
    }
}

/// Scales the set by each `beta` in turn.
pub fn beta_sweep<M: LanguageModel + ?Sized>(
    model: &M,
    probe: &TokenSequence,
    set: &[NeuronId],
    betas: &[f32],
) -> Result<BetaSweep> {
    if set.is_empty() {
        return Err(Error::Input(
            "beta sweep needs a non-empty critical set".into(),
        ));
    }
    if betas.is_empty() {
        return Err(Error::Config("beta list is empty".into()));
    }
    let clean = perplexity(model, probe, None)?;
    let rows = betas
        .iter()
        .map(|&beta| {
            let r = perplexity(
                model,
                probe,
                Some(&InterventionSpec::scale(set.iter().copied(), beta)),
            )?;
            Ok(BetaRow {
                beta,
                ppl: r.ppl,
                delta: Degradation::between(&clean, &r).delta,
            })
        })
        .collect::<Result<_>>()?;
    Ok(BetaSweep {
        model_hash: hex64(model.content_hash()),
        probe_hash: hex64(probe_hash(probe)),
        critical_set: set.to_vec(),
        rows,
    })
}

/// Reads the critical set out of an identify `report.json`.
pub fn read_critical_set(path: impl AsRef<Path>) -> Result<Vec<NeuronId>> {
    let report: CriticalSetReport = serde_json::from_str(&read(path.as_ref())?)?;
    Ok(report.critical_set)
}

pub fn run_beta_sweep(cfg: &ExperimentConfig, set: &[NeuronId]) -> Result<BetaSweep> {
    let model = cfg.load_model()?;
    let probe = cfg.load_probe(model.config())?;
    for n in set {
        n.validate(model.config())?;
    }
    beta_sweep(&model, &probe, set, &cfg.betas)
}

// ----------------------------------------------------------- token length

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub tokens: usize,
    pub n_star: Option<usize>,
    pub set_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSweep {
    pub model_hash: String,
    pub noise: NoiseConfig,
    pub epsilon: f64,
    pub rows: Vec<LengthRow>,
    /// Smallest `T` from which every longer prefix converges to the same set.
    pub stable_from: Option<usize>,
}

impl LengthSweep {
    /// Columns `tokens,n_star,set_hash`; empty cells when not converged.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &["tokens", "n_star", "set_hash"],
            self.rows.iter().map(|r| {
                vec![
                    r.tokens.to_string(),
                    r.n_star.map(|n| n.to_string()).unwrap_or_default(),
                    r.set_hash.clone().unwrap_or_default(),
                ]
            }),
        )
    }
}

fn stable_from(rows: &[LengthRow]) -> Option<usize> {
    let mut sorted: Vec<&LengthRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.tokens);
    let last = sorted.last()?.set_hash.as_ref()?;
    let mut from = None;
    for r in sorted.iter().rev() {
        if r.set_hash.as_ref() != Some(last) {
            break;
        }
        from = Some(r.tokens);
    }
    from
}

/// Runs identification on every sequence; rows keep input order.
pub fn token_length_sweep<M: LanguageModel + ?Sized>(
    model: &M,
    prefixes: &[TokenSequence],
    noise: &NoiseConfig,
    search: &SearchConfig,
) -> Result<LengthSweep> {
    if prefixes.is_empty() {
        return Err(Error::Config("no prefixes to sweep".into()));
    }
    let rows = prefixes
        .iter()
        .map(|p| {
            let id = identify(model, p, noise, search, None)?;
            Ok(LengthRow {
                tokens: p.len(),
                n_star: id.report.n_star,
                set_hash: match id.report.n_star {
                    Some(_) => Some(set_hash(&id.report.critical_set)?),
                    None => None,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LengthSweep {
        model_hash: hex64(model.content_hash()),
        noise: *noise,
        epsilon: search.epsilon,
        stable_from: stable_from(&rows),
        rows,
    })
}

/// Prefix lines from `cfg.prefixes`, or byte prefixes of the longest such
/// line (or of the probe) when `cfg.lengths` is set.
pub fn load_prefixes(cfg: &ExperimentConfig, config: &ModelConfig) -> Result<Vec<TokenSequence>> {
    let lines: Vec<String> = match &cfg.prefixes {
        Some(_) => read(cfg.required(&cfg.prefixes, "prefixes")?)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect(),
        None => Vec::new(),
    };
    if cfg.lengths.is_empty() {
        if lines.is_empty() {
            return Err(Error::Config(
                "token-length sweep needs a prefixes file or a lengths list".into(),
            ));
        }
        return lines.iter().map(|l| tokenize(l, config)).collect();
    }
    let source = match lines.iter().max_by_key(|l| l.len()) {
        Some(l) => tokenize(l, config)?,
        None => cfg.load_probe(config)?,
    };
    cfg.lengths
        .iter()
        .map(|&n| {
            if n > source.len() {
                return Err(Error::Input(format!(
                    "prefix length {n} exceeds the {}-token source text",
                    source.len()
                )));
            }
            source.prefix(n)
        })
        .collect()
}

pub fn run_token_length_sweep(cfg: &ExperimentConfig) -> Result<LengthSweep> {
    let model = cfg.load_model()?;
    let prefixes = load_prefixes(cfg, model.config())?;
    token_length_sweep(
        &model,
        &prefixes,
        &cfg.noise(),
        &cfg.search_for(model.config()),
    )
}

// ------------------------------------------------------------- parameters

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Alpha(Vec<f64>),
    K(Vec<usize>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Alpha(_) => "alpha",
            SweepAxis::K(_) => "k",
        }
    }

    fn settings(&self, base: &NoiseConfig) -> Vec<(f64, NoiseConfig)> {
        match self {
            SweepAxis::Alpha(v) => v
                .iter()
                .map(|&alpha| (alpha, NoiseConfig { alpha, ..*base }))
                .collect(),
            SweepAxis::K(v) => v
                .iter()
                .map(|&k_samples| (k_samples as f64, NoiseConfig { k_samples, ..*base }))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub value: f64,
    pub n_star: Option<usize>,
    #[serde(with = "f64_or_inf")]
    pub delta: f64,
    pub set_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSweep {
    pub axis: String,
    pub echo: SweepEcho,
    pub rows: Vec<ParamRow>,
}

impl ParamSweep {
    /// Columns `<axis>,n_star,delta,set_hash`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &[self.axis.as_str(), "n_star", "delta", "set_hash"],
            self.rows.iter().map(|r| {
                vec![
                    fmt_f64(r.value),
                    r.n_star.map(|n| n.to_string()).unwrap_or_default(),
                    fmt_f64(r.delta),
                    r.set_hash.clone().unwrap_or_default(),
                ]
            }),
        )
    }

    /// Shortest tail of rows sharing one critical set, as `(first value, set hash)`.
    pub fn constant_tail(&self) -> Option<(f64, String)> {
        let last = self.rows.last()?.set_hash.clone()?;
        let start = self
            .rows
            .iter()
            .rposition(|r| r.set_hash.as_ref() != Some(&last))
            .map_or(0, |i| i + 1);
        Some((self.rows[start].value, last))
    }
}

/// Varies one noise parameter, all others held at `base`.
pub fn parameter_sweep<M: LanguageModel + ?Sized>(
    model: &M,
    probe: &TokenSequence,
    axis: &SweepAxis,
    base: &NoiseConfig,
    search: &SearchConfig,
) -> Result<ParamSweep> {
    let cells = axis.settings(base);
    if cells.is_empty() {
        return Err(Error::Config(format!("{} axis is empty", axis.name())));
    }
    let rows = cells
        .iter()
        .map(|(value, noise)| {
            let id = identify(model, probe, noise, search, None)?;
            Ok(ParamRow {
                value: *value,
                n_star: id.report.n_star,
                delta: id.report.delta_at_n_star,
                set_hash: match id.report.n_star {
                    Some(_) => Some(set_hash(&id.report.critical_set)?),
                    None => None,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamSweep {
        axis: axis.name().into(),
        echo: SweepEcho::new(model, probe, *base, *search),
        rows,
    })
}

pub fn run_parameter_sweep(cfg: &ExperimentConfig, axis: &SweepAxis) -> Result<ParamSweep> {
    let model = cfg.load_model()?;
    let probe = cfg.load_probe(model.config())?;
    parameter_sweep(
        &model,
        &probe,
        axis,
        &cfg.noise(),
        &cfg.search_for(model.config()),
    )
}

// -------------------------------------------------------------- threshold

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub epsilon: f64,
    pub n_star: Option<usize>,
    /// `n_star`, or `"<budget>+"` when the budget ran out first.
    pub cell: String,
    #[serde(with = "f64_or_inf")]
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub echo: SweepEcho,
    pub budget: usize,
    pub rows: Vec<ThresholdRow>,
}

impl ThresholdTable {
    /// Columns `epsilon,n_star,delta`, with the budget marker in `n_star`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &["epsilon", "n_star", "delta"],
            self.rows
                .iter()
                .map(|r| vec![fmt_f64(r.epsilon), r.cell.clone(), fmt_f64(r.delta)]),
        )
    }
}

pub fn budget_marker(budget: usize) -> String {
    format!("{budget}+")
}

/// One greedy search per threshold over a ranking computed once.
pub fn threshold_table<M: LanguageModel + ?Sized>(
    model: &M,
    probe: &TokenSequence,
    ranking: &ImportanceRanking,
    epsilons: &[f64],
    step: usize,
    budget: usize,
) -> Result<Vec<ThresholdRow>> {
    if epsilons.is_empty() {
        return Err(Error::Config("epsilon list is empty".into()));
    }
    epsilons
        .iter()
        .map(|&epsilon| {
            let r = greedy_search(
                model,
                probe,
                ranking,
                &SearchConfig {
                    epsilon,
                    step,
                    max_n: budget,
                },
            )?;
            Ok(ThresholdRow {
                epsilon,
                n_star: r.n_star,
                cell: r
                    .n_star
                    .map_or_else(|| budget_marker(budget), |n| n.to_string()),
                delta: r.delta_at_n_star,
            })
        })
        .collect()
}

pub fn run_threshold_table(cfg: &ExperimentConfig) -> Result<ThresholdTable> {
    let model = cfg.load_model()?;
    let probe = cfg.load_probe(model.config())?;
    let search = cfg.search_for(model.config());
    let ranking = score_neurons(&model, &probe, &cfg.noise())?;
    Ok(ThresholdTable {
        echo: SweepEcho::new(&model, &probe, cfg.noise(), search),
        budget: search.max_n,
        rows: threshold_table(
            &model,
            &probe,
            &ranking,
            &cfg.epsilons,
            search.step,
            search.max_n,
        )?,
    })
}

// ---------------------------------------------------------------- baseline

/// Strategy curve measured on the corpus when given, otherwise on the probe.
pub fn run_baseline(cfg: &ExperimentConfig, strategy: StrategyId) -> Result<StrategyCurve> {
    let model = cfg.load_model()?;
    let probe = cfg.load_probe(model.config())?;
    let eval = cfg
        .load_corpus(model.config())?
        .unwrap_or_else(|| vec![probe.clone()]);
    let settings = CurveSettings {
        n_max: cfg
            .n_max
            .unwrap_or_else(|| cfg.search_for(model.config()).max_n),
        step: cfg.step,
        trials: cfg.trials,
        seed: cfg.seed,
        noise: cfg.noise(),
        gm_step: cfg.gm_step,
    };
    strategy_curve(&model, &probe, &eval, strategy, &settings)
}

// ----------------------------------------------------------------- eval

pub fn run_eval_ppl(cfg: &ExperimentConfig, mask: Option<&[NeuronId]>) -> Result<CorpusEval> {
    let model = cfg.load_model()?;
    let corpus = cfg
        .load_corpus(model.config())?
        .ok_or_else(|| Error::Config("corpus path is required".into()))?;
    let set = mask.unwrap_or(&[]);
    for n in set {
        n.validate(model.config())?;
    }
    evaluate_corpus(&model, &corpus, set)
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(value)?;
    json.push(b'\n');
    write_file(path, &json)
}

/// Writes raw bytes, creating parent directories.
pub fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    write_file(path, bytes)
}
