//! Agreement between rankings drawn with different noise seeds.
//!
//!     cargo run --release --example stability

use lesion::fixtures::{self, fixture_path, read_text, PROBE_FILE};
use lesion::importance::{distinct_seeds, ranking_stability, NoiseConfig};
use lesion::model::{load_model, tokenize};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for recipe in [fixtures::one_layer(), fixtures::two_layer()] {
        let model = load_model(fixture_path(recipe.file))?;
        let probe = tokenize(&read_text(PROBE_FILE)?, model.config())?;
        let report = ranking_stability(
            &model,
            &probe,
            &NoiseConfig::default(),
            &distinct_seeds(0, 5),
            10,
        )?;
        println!(
            "{}: top-{} jaccard mean {:.3} min {:.3}, spearman {:.3}",
            recipe.file,
            report.top_n,
            report.mean_jaccard,
            report.min_jaccard,
            report.mean_spearman
        );
    }
    Ok(())
}
