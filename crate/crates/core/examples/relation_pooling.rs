//! Top-k gated pooling of one node's neighbors under every relation.

use relconv::graph::NodeSpec;
use relconv::pooling::{pool_all, PoolingParams};
use relconv::{HeteroGraph, Tensor};

fn main() -> relconv::Result<()> {
    let feature = |x: f64, y: f64, t: &str| NodeSpec {
        node_type: t.into(),
        label: None,
        features: vec![x, y],
    };
    let nodes = vec![
        feature(0.0, 0.0, "paper"),
        feature(2.0, 0.1, "author"),
        feature(0.5, 1.0, "author"),
        feature(-1.0, 0.4, "author"),
        feature(1.0, 1.0, "venue"),
    ];
    let mut edges = Vec::new();
    for a in 1..=3 {
        edges.push((a, 0, "writes".to_string()));
    }
    edges.push((4, 0, "hosts".to_string()));
    let g = HeteroGraph::build(nodes, edges)?;

    // One direction per relation, in the graph's canonical relation order.
    let params = PoolingParams::new(
        vec![
            Tensor::vector(vec![1.0, 0.0]),
            Tensor::vector(vec![0.0, 1.0]),
        ],
        2,
    )?;
    let pooled = pool_all(&g, 0, &params)?;
    for (r, p) in g.relations().iter().zip(&pooled.provenance) {
        println!(
            "{} -[{}]->: selected {:?}, gates {:.3?}, {:?}",
            r.source_type, r.edge_type, p.selected, p.gates, p.padding
        );
    }
    let (t, k, d) = (
        pooled.x.shape()[0],
        pooled.x.shape()[1],
        pooled.x.shape()[2],
    );
    for r in 0..t {
        for i in 0..k {
            let row: Vec<f64> = (0..d).map(|j| pooled.x.at(&[r, i, j])).collect();
            println!("x[{r}][{i}] = {row:.4?}");
        }
    }
    Ok(())
}
