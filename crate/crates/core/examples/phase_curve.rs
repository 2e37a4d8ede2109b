//! Probe perplexity as the top-ranked neurons are masked one at a time,
//! printed as CSV.
//!
//!     cargo run --release --example phase_curve > curve.csv

use lesion::fixtures::{self, fixture_path, read_text, PROBE_FILE};
use lesion::importance::{score_neurons, NoiseConfig};
use lesion::model::{load_model, tokenize};
use lesion::search::{phase_curve, write_phase_csv};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model(fixture_path(fixtures::two_layer().file))?;
    let probe = tokenize(&read_text(PROBE_FILE)?, model.config())?;
    let ranking = score_neurons(&model, &probe, &NoiseConfig::default())?;
    let points = phase_curve(&model, &probe, &ranking, 60, 1)?;
    write_phase_csv(&points, std::io::stdout().lock())?;
    Ok(())
}
