//! Load a dataset directory and summarize its typed neighborhoods.
//!
//!     cargo run --example load_graph -- [DIR]

use std::path::PathBuf;

use relconv::dataset::{dataset_hash, load_dataset};
use relconv::RelationId;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/synth"));
    let g = load_dataset(&dir)?;
    println!(
        "{}: {} nodes, {} edges, {} classes, sha256 {}",
        dir.display(),
        g.node_count(),
        g.edge_count(),
        g.class_count(),
        &dataset_hash(&dir)?[..12]
    );
    for (i, r) in g.relations().iter().enumerate() {
        let counts: Vec<usize> = (0..g.node_count())
            .map(|v| g.neighbors(v, RelationId(i)).map(|n| n.len()).unwrap_or(0))
            .collect();
        let with = counts.iter().filter(|&&c| c > 0).count();
        let max = counts.iter().max().copied().unwrap_or(0);
        println!(
            "  {} -[{}]-> {}: {with} targets, at most {max} neighbors",
            r.source_type, r.edge_type, r.target_type
        );
    }
    Ok(())
}
