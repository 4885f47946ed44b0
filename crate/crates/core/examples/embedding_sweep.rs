//! Test F1 across embedding widths, in parallel when RELCONV_THREADS > 1.
//!
//!     RELCONV_THREADS=4 cargo run --release --example embedding_sweep

use relconv::cli::{run_sweep, thread_budget};
use relconv::synth::{synth_graph, SynthSpec};
use relconv::TrainConfig;

fn main() -> relconv::Result<()> {
    let graph = synth_graph(&SynthSpec::default(), 0)?;
    let values: Vec<String> = ["64", "128", "256", "512"].map(String::from).to_vec();
    let rows = run_sweep(
        &graph,
        &TrainConfig::default(),
        "hidden",
        &values,
        thread_budget(),
    )?;
    println!("hidden\ttest_f1_micro\ttest_f1_macro");
    for (v, micro, macro_) in rows {
        println!("{v}\t{micro:.4}\t{macro_:.4}");
    }
    Ok(())
}
