//! Train, then project paper embeddings to 2-D and print per-class centroids.

use relconv::pca::pca;
use relconv::synth::{synth_graph, SynthSpec};
use relconv::train::train;
use relconv::{Tensor, TrainConfig};

fn main() -> relconv::Result<()> {
    let graph = synth_graph(&SynthSpec::default(), 0)?;
    let config = TrainConfig {
        hidden: 64,
        filters: 16,
        ..TrainConfig::default()
    };
    let out = train(&graph, &config)?;
    let emb = out.model.embeddings(&graph)?;
    let papers = graph.labeled_nodes();
    let rows: Vec<Vec<f64>> = papers.iter().map(|&v| emb.row(v).to_vec()).collect();
    let p = pca(&Tensor::from_rows(&rows)?, 2)?;
    println!("explained variance {:.4?}", p.variances);
    for c in 0..graph.class_count() {
        let members: Vec<usize> = (0..papers.len())
            .filter(|&i| graph.label(papers[i]) == Some(c))
            .collect();
        let mean = |axis: usize| {
            members
                .iter()
                .map(|&i| p.projected.at(&[i, axis]))
                .sum::<f64>()
                / members.len() as f64
        };
        println!(
            "class {c}: {} papers, centroid ({:+.3}, {:+.3})",
            members.len(),
            mean(0),
            mean(1)
        );
    }
    Ok(())
}
