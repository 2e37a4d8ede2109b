use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use lesion::baselines::StrategyId;
use lesion::harness::{self, ExperimentConfig, SweepAxis};
use lesion::model::{generate_model, save_model, ModelConfig};
use lesion::report::{fmt_f64, hex64};
use lesion::{Error, Result};

const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "lesion",
    version,
    about = "Locate critical neurons in small decoder-only models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every experiment. Any of them may also come from
/// `--config`; flags win.
#[derive(Args, Serialize, Default)]
struct Common {
    /// JSON file with the same keys as the flags (snake_case).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    probe: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    prefixes: Option<PathBuf>,
    /// Noise scale.
    #[arg(long)]
    alpha: Option<f64>,
    /// Noisy passes per ranking (K).
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// mean, max or last.
    #[arg(long)]
    reduction: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    step: Option<usize>,
    /// Largest prefix the greedy search may mask.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    betas: Option<Vec<f32>>,
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    /// Prefix lengths for the token-length sweep.
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<usize>>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    gm_step: Option<f64>,
}

impl Common {
    fn resolve(&self, out_dir: Option<&Path>) -> Result<ExperimentConfig> {
        let mut merged = match &self.config {
            Some(p) => serde_json::to_value(ExperimentConfig::from_json_file(p)?)?,
            None => serde_json::to_value(ExperimentConfig::default())?,
        };
        let Value::Object(mut flags) = serde_json::to_value(self)? else {
            unreachable!("flags serialize as an object")
        };
        flags.retain(|_, v| !v.is_null());
        if let Some(dir) = out_dir {
            flags.insert("out_dir".into(), serde_json::to_value(dir)?);
        }
        if let Value::Object(base) = &mut merged {
            base.extend(flags);
        }
        Ok(serde_json::from_value(merged)?)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a random Gaussian model.
    GenModel {
        #[arg(long)]
        layers: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        heads: usize,
        #[arg(long)]
        mlp_dim: usize,
        #[arg(long, default_value_t = 256)]
        vocab: usize,
        #[arg(long, default_value_t = 512)]
        max_seq_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        untied: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank neurons and search for the smallest critical set.
    Identify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Masking curve over the ranking, no early stop.
    PhaseCurve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scale a critical set by each beta.
    SweepBeta {
        #[command(flatten)]
        common: Common,
        /// report.json from `identify`.
        #[arg(long)]
        set: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Vary alpha or K with the other fixed.
    SweepParams {
        #[command(flatten)]
        common: Common,
        /// alpha or k; inferred from --alphas / --ks when omitted.
        #[arg(long)]
        axis: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Identification per probe prefix length.
    SweepLength {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// n* for each epsilon from a single ranking.
    ThresholdTable {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Masking curve for a comparison strategy.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// random, am, gm or perturb.
        #[arg(long)]
        strategy: StrategyId,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus perplexity, optionally with a critical set masked.
    EvalPpl {
        #[command(flatten)]
        common: Common,
        /// report.json from `identify`.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Writes `csv` to `out` and `json` next to it with a `.json` extension.
fn emit<T: Serialize>(out: &Path, csv: &[u8], json: &T) -> Result<()> {
    harness::write_output(out, csv)?;
    harness::write_json(&out.with_extension("json"), json)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn status(converged: bool) -> ExitCode {
    if converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NOT_CONVERGED)
    }
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::GenModel {
            layers,
            dim,
            heads,
            mlp_dim,
            vocab,
            max_seq_len,
            seed,
            untied,
            out,
        } => {
            let config = ModelConfig {
                n_layers: layers,
                d_model: dim,
                n_heads: heads,
                d_mlp: mlp_dim,
                vocab_size: vocab,
                max_seq_len,
                norm_eps: 1e-5,
                tie_embeddings: !untied,
            };
            let model = generate_model(&config, seed)?;
            save_model(&model, &out)?;
            println!(
                "{} {}",
                out.display(),
                hex64(lesion::model::LanguageModel::content_hash(&model))
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Identify { common, out_dir } => {
            let cfg = common.resolve(out_dir.as_deref())?;
            let id = harness::run_identify(&cfg)?;
            let r = &id.report;
            match r.n_star {
                Some(n) => println!(
                    "n* = {n}  delta = {}  ppl {} -> {}",
                    fmt_f64(r.delta_at_n_star),
                    fmt_f64(r.ppl_original),
                    fmt_f64(r.ppl_masked)
                ),
                None => println!(
                    "not converged within {} (max delta {})",
                    r.config.search.max_n,
                    fmt_f64(r.delta_at_n_star)
                ),
            }
            if let Some(c) = &id.corpus {
                println!(
                    "corpus ppl {} -> {}",
                    fmt_f64(c.ppl_original),
                    fmt_f64(c.ppl_masked)
                );
            }
            println!("wrote {}", cfg.out_dir.display());
            Ok(status(r.converged))
        }
        Cmd::PhaseCurve { common, out } => {
            let curve = harness::run_phase_curve(&common.resolve(None)?)?;
            emit(&out, &curve.to_csv()?, &curve)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::SweepBeta { common, set, out } => {
            let cfg = common.resolve(None)?;
            let sweep = harness::run_beta_sweep(&cfg, &harness::read_critical_set(&set)?)?;
            emit(&out, &sweep.to_csv()?, &sweep)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::SweepParams { common, axis, out } => {
            let axis = match (axis.as_deref(), &common.alphas, &common.ks) {
                (Some("alpha"), _, _) | (None, Some(_), None) | (None, None, None) => "alpha",
                (Some("k"), _, _) | (None, None, Some(_)) => "k",
                (None, Some(_), Some(_)) => {
                    return Err(Error::Config(
                        "pass --axis when giving both --alphas and --ks".into(),
                    ))
                }
                (Some(other), _, _) => {
                    return Err(Error::Config(format!("unknown axis `{other}`")))
                }
            };
            let cfg = common.resolve(None)?;
            let axis = match axis {
                "alpha" => SweepAxis::Alpha(cfg.alphas.clone()),
                _ => SweepAxis::K(cfg.ks.clone()),
            };
            let sweep = harness::run_parameter_sweep(&cfg, &axis)?;
            emit(&out, &sweep.to_csv()?, &sweep)?;
            Ok(status(sweep.rows.iter().all(|r| r.n_star.is_some())))
        }
        Cmd::SweepLength { common, out } => {
            let sweep = harness::run_token_length_sweep(&common.resolve(None)?)?;
            emit(&out, &sweep.to_csv()?, &sweep)?;
            match sweep.stable_from {
                Some(t) => println!("critical set constant for T >= {t}"),
                None => println!("critical set not constant at the longest prefixes"),
            }
            Ok(status(sweep.rows.iter().all(|r| r.n_star.is_some())))
        }
        Cmd::ThresholdTable { common, out } => {
            let table = harness::run_threshold_table(&common.resolve(None)?)?;
            for r in &table.rows {
                println!("epsilon {:>6}  n* {}", fmt_f64(r.epsilon), r.cell);
            }
            emit(&out, &table.to_csv()?, &table)?;
            Ok(status(table.rows.iter().all(|r| r.n_star.is_some())))
        }
        Cmd::Baseline {
            common,
            strategy,
            out,
        } => {
            let curve = harness::run_baseline(&common.resolve(None)?, strategy)?;
            let mut csv = Vec::new();
            curve.write_csv(&mut csv)?;
            emit(&out, &csv, &curve)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::EvalPpl { common, mask, out } => {
            let cfg = common.resolve(None)?;
            let set = mask.as_ref().map(harness::read_critical_set).transpose()?;
            let eval = harness::run_eval_ppl(&cfg, set.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&eval)?);
            if let Some(out) = out {
                harness::write_json(&out, &eval)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
