//! How n* responds to the noise scale and the number of noisy samples,
//! one axis at a time.
//!
//!     cargo run --release --example param_sweep

use lesion::fixtures::{self, fixture_path, read_text, PROBE_FILE};
use lesion::harness::{parameter_sweep, SweepAxis, DEFAULT_ALPHAS, DEFAULT_KS};
use lesion::importance::NoiseConfig;
use lesion::model::{load_model, tokenize};
use lesion::search::SearchConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model(fixture_path(fixtures::one_layer().file))?;
    let probe = tokenize(&read_text(PROBE_FILE)?, model.config())?;
    let search = SearchConfig::defaults_for(model.config());

    for axis in [
        SweepAxis::Alpha(DEFAULT_ALPHAS.to_vec()),
        SweepAxis::K(DEFAULT_KS.to_vec()),
    ] {
        let sweep = parameter_sweep(&model, &probe, &axis, &NoiseConfig::default(), &search)?;
        println!("{:>6} {:>6}  set", sweep.axis, "n*");
        for r in &sweep.rows {
            let n = r.n_star.map_or("-".into(), |n| n.to_string());
            println!(
                "{:>6} {:>6}  {}",
                r.value,
                n,
                r.set_hash.as_deref().unwrap_or("-")
            );
        }
        if let Some((from, _)) = sweep.constant_tail() {
            println!("same set from {} = {from}\n", sweep.axis);
        }
    }
    Ok(())
}
