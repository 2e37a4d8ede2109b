#![allow(dead_code)]

use lesion::fixtures::{self, fixture_path, read_text, FixtureRecipe, PROBE_FILE};
use lesion::model::{load_model, tokenize, ModelBundle, TokenSequence};

/// n* of the committed 2-layer fixture at default settings.
pub const EXPECTED_N_STAR_2L: usize = 13;
/// n* of the committed 1-layer fixture at default settings.
pub const EXPECTED_N_STAR_1L: usize = 2;

pub fn load(recipe: &FixtureRecipe) -> (ModelBundle, TokenSequence) {
    let model = load_model(fixture_path(recipe.file)).expect("fixture model");
    let probe =
        tokenize(&read_text(PROBE_FILE).expect("probe"), model.config()).expect("probe tokens");
    (model, probe)
}

pub fn one_layer() -> (ModelBundle, TokenSequence) {
    load(&fixtures::one_layer())
}

pub fn two_layer() -> (ModelBundle, TokenSequence) {
    load(&fixtures::two_layer())
}
