//! Corpus perplexity with and without the critical set found on the probe.
//!
//!     cargo run --release --example eval_corpus

use lesion::fixtures::{self, fixture_path, read_text, CORPUS_FILE, PROBE_FILE};
use lesion::harness::{evaluate_corpus, identify};
use lesion::importance::NoiseConfig;
use lesion::metrics::parse_corpus;
use lesion::model::{load_model, tokenize};
use lesion::search::SearchConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for recipe in [fixtures::one_layer(), fixtures::two_layer()] {
        let model = load_model(fixture_path(recipe.file))?;
        let probe = tokenize(&read_text(PROBE_FILE)?, model.config())?;
        let corpus = parse_corpus(&read_text(CORPUS_FILE)?, model.config())?;
        let search = SearchConfig::defaults_for(model.config());
        let set = identify(&model, &probe, &NoiseConfig::default(), &search, None)?
            .report
            .critical_set;

        let e = evaluate_corpus(&model, &corpus, &set)?;
        println!(
            "{}: {} neurons masked, {} tokens scored, ppl {:.1} -> {:.1}",
            recipe.file, e.masked_neurons, e.predicted_tokens, e.ppl_original, e.ppl_masked
        );
    }
    Ok(())
}
