//! Checks the greedy prefix against brute force over a small pool of
//! top-ranked neurons.
//!
//!     cargo run --release --example exhaustive

use lesion::fixtures::{self, fixture_path, read_text, PROBE_FILE};
use lesion::importance::{score_neurons, NoiseConfig};
use lesion::model::{load_model, tokenize};
use lesion::search::{exhaustive_min_set, prefix_crossing};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model(fixture_path(fixtures::one_layer().file))?;
    let probe = tokenize(&read_text(PROBE_FILE)?, model.config())?;
    let pool = score_neurons(&model, &probe, &NoiseConfig::default())?.top(12);

    for epsilon in [0.05, 0.3, 0.8] {
        let greedy = prefix_crossing(&model, &probe, &pool, epsilon)?;
        let best = exhaustive_min_set(&model, &probe, &pool, 3, epsilon)?;
        println!(
            "epsilon {epsilon}: greedy prefix {:?}, exhaustive {:?}",
            greedy,
            best.map(|b| (b.size, b.evaluations))
        );
    }
    Ok(())
}
