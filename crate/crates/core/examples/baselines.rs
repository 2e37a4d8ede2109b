//! Compares the perturbation ranking with random, activation-magnitude and
//! gradient-magnitude orderings by masking the top `n` of each.
//!
//!     cargo run --release --example baselines

use lesion::baselines::{strategy_curve, CurveSettings, StrategyId, DEFAULT_GM_STEP};
use lesion::fixtures::{self, fixture_path, read_text, PROBE_FILE};
use lesion::importance::NoiseConfig;
use lesion::model::{load_model, tokenize};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model(fixture_path(fixtures::two_layer().file))?;
    let probe = tokenize(&read_text(PROBE_FILE)?, model.config())?;
    let settings = CurveSettings {
        n_max: 40,
        step: 10,
        trials: 10,
        seed: 0,
        noise: NoiseConfig::default(),
        gm_step: DEFAULT_GM_STEP,
    };

    print!("{:>8}", "n");
    let curves = StrategyId::ALL
        .iter()
        .map(|&s| {
            print!("{:>12}", s.short_name());
            strategy_curve(&model, &probe, std::slice::from_ref(&probe), s, &settings)
        })
        .collect::<Result<Vec<_>, _>>()?;
    println!();
    for i in 0..curves[0].points.len() {
        print!("{:>8}", curves[0].points[i].n);
        for c in &curves {
            print!("{:>12.3}", c.points[i].mean_ppl);
        }
        println!();
    }
    Ok(())
}
