//! Smallest critical set for a grid of degradation thresholds, all from one
//! ranking. Thresholds the curve never reaches show the budget marker.
//!
//!     cargo run --release --example threshold_table

use lesion::fixtures::{self, fixture_path, read_text, PROBE_FILE};
use lesion::harness::{threshold_table, DEFAULT_EPSILONS};
use lesion::importance::{score_neurons, NoiseConfig};
use lesion::model::{load_model, tokenize};
use lesion::search::SearchConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model(fixture_path(fixtures::two_layer().file))?;
    let probe = tokenize(&read_text(PROBE_FILE)?, model.config())?;
    let budget = SearchConfig::defaults_for(model.config()).max_n;
    let ranking = score_neurons(&model, &probe, &NoiseConfig::default())?;

    for row in threshold_table(&model, &probe, &ranking, &DEFAULT_EPSILONS, 1, budget)? {
        println!(
            "epsilon {:>5}  n* {:>5}  delta {:.3}",
            row.epsilon, row.cell, row.delta
        );
    }
    Ok(())
}
