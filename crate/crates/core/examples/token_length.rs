//! Identification on nested prefixes of one sentence, to see from which
//! length on the critical set stops changing.
//!
//!     cargo run --release --example token_length

use lesion::fixtures::{self, fixture_path, read_text, PREFIXES_FILE};
use lesion::harness::token_length_sweep;
use lesion::importance::NoiseConfig;
use lesion::model::{load_model, tokenize};
use lesion::search::SearchConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model(fixture_path(fixtures::one_layer().file))?;
    let prefixes = read_text(PREFIXES_FILE)?
        .lines()
        .map(|l| tokenize(l, model.config()))
        .collect::<Result<Vec<_>, _>>()?;

    let sweep = token_length_sweep(
        &model,
        &prefixes,
        &NoiseConfig::default(),
        &SearchConfig::defaults_for(model.config()),
    )?;
    for r in &sweep.rows {
        println!(
            "T = {:>3}  n* = {:?}  {}",
            r.tokens,
            r.n_star,
            r.set_hash.as_deref().unwrap_or("-")
        );
    }
    println!("stable from T = {:?}", sweep.stable_from);
    Ok(())
}
