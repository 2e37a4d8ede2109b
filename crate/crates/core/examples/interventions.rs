//! Forward passes with neuron interventions and activation capture.
//!
//!     cargo run --release --example interventions

use lesion::fixtures::{self, fixture_path};
use lesion::metrics::perplexity;
use lesion::model::{load_model, tokenize, LanguageModel};
use lesion::neuron::{InterventionSpec, NeuronId, SiteId, SiteKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model(fixture_path(fixtures::one_layer().file))?;
    let tokens = tokenize("Four score and seven", model.config())?;
    let emb = model.embed(&tokens)?;
    let site = SiteId::new(0, SiteKind::MlpAct);
    let n = NeuronId::new(0, SiteKind::MlpAct, 3);

    let specs = [
        ("clean", InterventionSpec::scale([], 1.0)),
        ("mask", InterventionSpec::mask([n])),
        ("double", InterventionSpec::scale([n], 2.0)),
        ("shift +1", InterventionSpec::shift([n], 1.0)),
    ];
    for (name, spec) in &specs {
        let out = model.forward(&emb, std::slice::from_ref(spec), &[site])?;
        let act = out.tape.get(site).expect("captured");
        let column: Vec<f32> = (0..act.rows()).map(|t| act.get(t, n.index)).collect();
        let ppl = perplexity(&model, &tokens, Some(spec))?.ppl;
        println!("{name:>9}: ppl {ppl:8.3}  channel {column:.3?}");
    }
    Ok(())
}
