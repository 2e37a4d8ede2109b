//! Recipes for the bundled toy models.
//!
//! Each fixture is a Gaussian draw from [`generate_model`] whose output head
//! is then replaced by [`fit_readout`] on a short fitting text, so that the
//! clean model predicts its probe well and masking has something to break.
//! `examples/build_fixtures.rs` writes the `.nlf` files; the test suite
//! rebuilds them and compares content hashes.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::model::{fit_readout, generate_model, tokenize, ModelBundle, ModelConfig, ReadoutFit};

/// Probe used by every fixture experiment (30 byte tokens).
pub const PROBE_FILE: &str = "probe.txt";
/// Nested prefixes for the token-length sweep, one per line.
pub const PREFIXES_FILE: &str = "prefixes.txt";
/// Evaluation corpus, one sequence per line.
pub const CORPUS_FILE: &str = "corpus.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitText {
    Probe,
    /// Last (longest) line of the prefixes file.
    LongestPrefix,
}

#[derive(Debug, Clone)]
pub struct FixtureRecipe {
    pub file: &'static str,
    pub config: ModelConfig,
    pub seed: u64,
    pub fit_text: FitText,
    pub fit: ReadoutFit,
}

pub fn one_layer() -> FixtureRecipe {
    FixtureRecipe {
        file: "tiny-1l-d32.nlf",
        config: ModelConfig {
            n_layers: 1,
            d_model: 32,
            n_heads: 2,
            d_mlp: 64,
            vocab_size: 256,
            max_seq_len: 512,
            norm_eps: 1e-5,
            tie_embeddings: false,
        },
        seed: 7,
        fit_text: FitText::Probe,
        fit: ReadoutFit {
            ridge: 0.01,
            target_scale: 8.0,
        },
    }
}

pub fn two_layer() -> FixtureRecipe {
    FixtureRecipe {
        file: "small-2l-d64.nlf",
        config: ModelConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_mlp: 128,
            vocab_size: 256,
            max_seq_len: 512,
            norm_eps: 1e-5,
            tie_embeddings: false,
        },
        seed: 42,
        fit_text: FitText::LongestPrefix,
        fit: ReadoutFit {
            ridge: 0.1,
            target_scale: 8.0,
        },
    }
}

/// `<crate>/fixtures`.
pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture_path(name: &str) -> PathBuf {
    fixture_dir().join(name)
}

/// Reads a fixture text file, dropping a trailing newline.
pub fn read_text(name: &str) -> Result<String> {
    let path = fixture_path(name);
    let text =
        std::fs::read_to_string(&path).map_err(|source| crate::Error::File { path, source })?;
    Ok(text.trim_end_matches(['\n', '\r']).to_string())
}

pub fn build(recipe: &FixtureRecipe) -> Result<ModelBundle> {
    let base = generate_model(&recipe.config, recipe.seed)?;
    let text = match recipe.fit_text {
        FitText::Probe => read_text(PROBE_FILE)?,
        FitText::LongestPrefix => read_text(PREFIXES_FILE)?
            .lines()
            .last()
            .unwrap_or_default()
            .to_string(),
    };
    let tokens = tokenize(&text, &recipe.config)?;
    fit_readout(&base, &[tokens], recipe.fit)
}
