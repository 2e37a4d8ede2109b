mod common;

use lesion::fixtures::{self, fixture_path, read_text, CORPUS_FILE, PREFIXES_FILE, PROBE_FILE};
use lesion::model::load_model;

#[test]
fn rebuilt_fixtures_match_committed_files() {
    for recipe in [fixtures::one_layer(), fixtures::two_layer()] {
        let rebuilt = fixtures::build(&recipe).unwrap();
        let committed = load_model(fixture_path(recipe.file)).unwrap();
        assert_eq!(
            rebuilt.content_hash(),
            committed.content_hash(),
            "{}",
            recipe.file
        );
        assert_eq!(committed.config(), &recipe.config);
    }
}

#[test]
fn probe_is_thirty_tokens() {
    let (_, probe) = common::two_layer();
    assert_eq!(probe.len(), 30);
}

#[test]
fn prefixes_are_nested_and_growing() {
    let text = read_text(PREFIXES_FILE).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() >= 10);
    for w in lines.windows(2) {
        assert!(w[1].starts_with(w[0]) && w[1].len() > w[0].len());
    }
    assert!(read_text(PROBE_FILE).unwrap().len() == 30);
}

#[test]
fn corpus_lines_fit_the_context() {
    let (model, _) = common::one_layer();
    let corpus =
        lesion::metrics::parse_corpus(&read_text(CORPUS_FILE).unwrap(), model.config()).unwrap();
    assert_eq!(corpus.len(), 10);
}
