//! End-to-end identification on the bundled 2-layer model: rank every
//! neuron by noise sensitivity, then grow the masked prefix until the probe
//! perplexity rises tenfold.
//!
//!     cargo run --release --example identify

use lesion::fixtures::{self, fixture_path, read_text, CORPUS_FILE, PROBE_FILE};
use lesion::harness::identify;
use lesion::importance::NoiseConfig;
use lesion::metrics::parse_corpus;
use lesion::model::{load_model, tokenize};
use lesion::search::SearchConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model(fixture_path(fixtures::two_layer().file))?;
    let probe = tokenize(&read_text(PROBE_FILE)?, model.config())?;
    let corpus = parse_corpus(&read_text(CORPUS_FILE)?, model.config())?;

    let search = SearchConfig::defaults_for(model.config());
    let id = identify(
        &model,
        &probe,
        &NoiseConfig::default(),
        &search,
        Some(&corpus),
    )?;
    let r = &id.report;

    println!("n* = {:?} after {} forward passes", r.n_star, r.evaluations);
    println!(
        "probe ppl {:.3} -> {:.3} (delta {:.3})",
        r.ppl_original, r.ppl_masked, r.delta_at_n_star
    );
    for n in &r.critical_set {
        println!("  {n}");
    }
    println!("layer  down  other");
    for c in &id.layers.layers {
        println!("{:>5} {:>5} {:>6}", c.layer, c.down(), c.other());
    }
    if let Some(c) = id.corpus {
        println!(
            "corpus ({} lines) ppl {:.1} -> {:.1}",
            c.sequences, c.ppl_original, c.ppl_masked
        );
    }
    Ok(())
}
