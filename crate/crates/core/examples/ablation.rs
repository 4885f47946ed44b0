//! Full model against the variant that averages pooled rows instead of
//! convolving them, on identical graphs, splits and initial pooling.
//!
//!     cargo run --release --example ablation -- [SEEDS]

use relconv::synth::{synth_graph, SynthSpec};
use relconv::train::{evaluate, train};
use relconv::TrainConfig;

fn main() -> relconv::Result<()> {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    println!("seed\tconv\tmean");
    for seed in 0..seeds {
        let graph = synth_graph(&SynthSpec::default(), seed)?;
        let mut row = vec![seed.to_string()];
        for ablation in [false, true] {
            let config = TrainConfig {
                seed,
                ablation,
                ..TrainConfig::default()
            };
            let out = train(&graph, &config)?;
            let test = evaluate(&out.model, &graph, &out.split.test)?;
            row.push(format!("{:.3}", test.f1_micro));
        }
        println!("{}", row.join("\t"));
    }
    Ok(())
}
