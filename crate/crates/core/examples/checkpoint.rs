//! Save a trained model, load it back and confirm identical predictions.

use relconv::synth::{synth_graph, SynthSpec};
use relconv::train::train;
use relconv::{Model, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let graph = synth_graph(&SynthSpec::default(), 2)?;
    let config = TrainConfig {
        depth: 1,
        hidden: 32,
        filters: 8,
        max_epochs: 30,
        ..TrainConfig::default()
    };
    let out = train(&graph, &config)?;
    let dir = std::env::temp_dir().join("relconv-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.json");
    out.model.save(&path)?;
    let loaded = Model::load(&path)?;
    println!(
        "{} parameters, round trip exact: {}, same predictions: {}",
        loaded.param_count(),
        loaded == out.model,
        loaded.predict(&graph)? == out.model.predict(&graph)?
    );
    Ok(())
}
