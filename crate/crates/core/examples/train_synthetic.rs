//! Generate the author/paper benchmark and train the default model.
//!
//!     cargo run --release --example train_synthetic -- [SEED]

use relconv::synth::{synth_graph, SynthSpec};
use relconv::train::{evaluate, train};
use relconv::TrainConfig;

fn main() -> relconv::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let graph = synth_graph(&SynthSpec::default(), seed)?;
    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let out = train(&graph, &config)?;
    for r in out.records.iter().step_by(10) {
        println!(
            "epoch {:3}  train {:.4}  val {:.4}  val f1 {:.3}",
            r.epoch, r.train_loss, r.val_loss, r.val_f1_micro
        );
    }
    let test = evaluate(&out.model, &graph, &out.split.test)?;
    println!(
        "best epoch {} of {}; test f1 micro {:.4} macro {:.4}",
        out.best_epoch,
        out.records.len(),
        test.f1_micro,
        test.f1_macro
    );
    Ok(())
}
