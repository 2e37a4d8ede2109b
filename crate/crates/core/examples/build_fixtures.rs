//! Rebuilds the bundled fixture models and prints their content hashes.
//!
//!     cargo run --release --example build_fixtures

use lesion::fixtures::{self, fixture_path};
use lesion::model::save_model;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for recipe in [fixtures::one_layer(), fixtures::two_layer()] {
        let bundle = fixtures::build(&recipe)?;
        let path = fixture_path(recipe.file);
        save_model(&bundle, &path)?;
        println!(
            "{} {:016x} ({})",
            recipe.file,
            bundle.content_hash(),
            path.display()
        );
    }
    Ok(())
}
