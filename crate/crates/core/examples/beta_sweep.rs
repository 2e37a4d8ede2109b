//! Scales the critical set by several factors instead of zeroing it.
//!
//!     cargo run --release --example beta_sweep

use lesion::fixtures::{self, fixture_path, read_text, PROBE_FILE};
use lesion::harness::{beta_sweep, identify, DEFAULT_BETAS};
use lesion::importance::NoiseConfig;
use lesion::model::{load_model, tokenize};
use lesion::search::SearchConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model(fixture_path(fixtures::two_layer().file))?;
    let probe = tokenize(&read_text(PROBE_FILE)?, model.config())?;
    let id = identify(
        &model,
        &probe,
        &NoiseConfig::default(),
        &SearchConfig::defaults_for(model.config()),
        None,
    )?;

    let sweep = beta_sweep(&model, &probe, &id.report.critical_set, &DEFAULT_BETAS)?;
    println!("{:>6} {:>14} {:>8}", "beta", "ppl", "delta");
    for r in &sweep.rows {
        println!("{:>6} {:>14.3} {:>8.3}", r.beta, r.ppl, r.delta);
    }
    Ok(())
}
