//! Relation-specific importance pooling.
//!
//! For a target node `v` and relation `t`, each neighbor `u ∈ N_v^t` is
//! scored by projecting its feature row onto the unit direction of a
//! trainable vector `v_t`. The `k` best-scoring neighbors are kept, each row
//! scaled by the sigmoid of its score. A relation with fewer than `k`
//! neighbors is padded with copies of the mean gated row; a relation with no
//! neighbors at `v` contributes an all-zero `k × D` block.
//!
//! Selection is treated as a constant of the forward pass: gradients reach
//! `v_t` only through the gate values.

use std::cmp::Ordering;
use std::sync::Arc;

use crate::autodiff::{RowMix, Tape, Var};
use crate::error::{GraphError, Result, TensorError};
use crate::graph::{HeteroGraph, RelationId};
use crate::tensor::Tensor;

/// Trainable projection vectors, one per relation in canonical order, plus
/// the pooling size `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingParams {
    pub projections: Vec<Tensor>,
    pub k: usize,
}

impl PoolingParams {
    pub fn new(projections: Vec<Tensor>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(crate::Error::Config(
                "pooling size k must be at least 1".into(),
            ));
        }
        Ok(Self { projections, k })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// At least `k` neighbors were available.
    None,
    /// Only `from < k` neighbors; the remaining rows repeat their mean.
    MeanPadded { from: usize },
    /// No neighbors under this relation at this node.
    ZeroRelation,
}

/// What pooling did for one (node, relation) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationProvenance {
    /// Selected neighbor ids, best score first.
    pub selected: Vec<usize>,
    /// Gate value `sigmoid(score)` of each selected neighbor.
    pub gates: Vec<f64>,
    pub padding: Padding,
}

/// Pooled tensor of one node, shape `(|T_e|, k, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledNeighborhood {
    pub x: Tensor,
    pub provenance: Vec<RelationProvenance>,
}

/// `s_i = ⟨x_i, v_t⟩ / ‖v_t‖` for every row of `features`.
pub fn score(features: &Tensor, v_t: &Tensor) -> Result<Tensor> {
    if features.rank() != 2 || features.rows() == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "score",
            left: features.shape().to_vec(),
            right: v_t.shape().to_vec(),
        }
        .into());
    }
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let v = tape.constant(v_t.clone());
    let s = score_var(&mut tape, x, v)?;
    let n = features.rows();
    Ok(tape.value(s).reshape(&[n])?)
}

/// Scores as an `n × 1` column on the tape.
pub(crate) fn score_var(tape: &mut Tape, features: Var, v_t: Var) -> Result<Var> {
    let d = tape.shape(v_t).iter().product::<usize>();
    let unit = tape.unit(v_t)?;
    let column = tape.reshape(unit, &[d, 1])?;
    Ok(tape.matmul(features, column)?)
}

fn by_score_desc(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Indices of the `min(k, n)` largest scores, best first; equal scores keep
/// ascending index order.
pub fn rank_topk(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| by_score_desc(scores, a, b));
    idx.truncate(k);
    idx
}

/// Top-`k` node ids among `neighbors`, ranked by `node_scores[u]`, ties
/// broken by ascending node id regardless of the order of `neighbors`.
pub fn select_neighbors(neighbors: &[usize], node_scores: &[f64], k: usize) -> Vec<usize> {
    let mut chosen = neighbors.to_vec();
    chosen.sort_by(|&a, &b| by_score_desc(node_scores, a, b));
    chosen.truncate(k);
    chosen
}

/// Row-mixing plan that turns the gated feature matrix of one relation into
/// `k` pooled rows per batch node.
fn pooling_mix(selected: &[usize], k: usize, mix: &mut RowMix) -> Padding {
    let m = selected.len();
    if m == 0 {
        for _ in 0..k {
            mix.push_row([]);
        }
        return Padding::ZeroRelation;
    }
    for &u in selected {
        mix.push_row([(u, 1.0)]);
    }
    let w = 1.0 / m as f64;
    for _ in m..k {
        mix.push_row(selected.iter().map(|&u| (u, w)));
    }
    if m < k {
        Padding::MeanPadded { from: m }
    } else {
        Padding::None
    }
}

/// Pools every node in `nodes` over all relations.
///
/// `features` is the `N × D` matrix of the whole graph and `projections`
/// holds one `v_t` variable per relation. Returns a `[nodes.len(), T, k, D]`
/// variable together with per-node provenance.
pub fn pool_nodes(
    tape: &mut Tape,
    graph: &HeteroGraph,
    features: Var,
    projections: &[Var],
    k: usize,
    nodes: &[usize],
) -> Result<(Var, Vec<Vec<RelationProvenance>>)> {
    let relations = graph.relation_count();
    if projections.len() != relations {
        return Err(TensorError::ShapeMismatch {
            op: "pool_nodes",
            left: vec![relations],
            right: vec![projections.len()],
        }
        .into());
    }
    if k == 0 {
        return Err(crate::Error::Config(
            "pooling size k must be at least 1".into(),
        ));
    }
    let fshape = tape.shape(features).to_vec();
    if fshape.len() != 2 || fshape[0] != graph.node_count() {
        return Err(TensorError::ShapeMismatch {
            op: "pool_nodes",
            left: vec![graph.node_count()],
            right: fshape,
        }
        .into());
    }
    let d = fshape[1];
    if let Some(&v) = nodes.iter().find(|&&v| v >= graph.node_count()) {
        return Err(GraphError::NodeOutOfRange {
            node: v,
            nodes: graph.node_count(),
        }
        .into());
    }

    let mut provenance = vec![Vec::with_capacity(relations); nodes.len()];
    if relations == 0 {
        let zeros = tape.constant(Tensor::zeros(&[nodes.len(), 0, k, d]));
        return Ok((zeros, provenance));
    }
    let mut slices = Vec::with_capacity(relations);
    for (t, &v_t) in projections.iter().enumerate() {
        let scores = score_var(tape, features, v_t)?;
        let gates = tape.sigmoid(scores)?;
        let gated = tape.mul_column(features, gates)?;
        let score_values = tape.value(scores).data().to_vec();
        let gate_values = tape.value(gates).data().to_vec();

        let mut mix = RowMix::new();
        for (i, &v) in nodes.iter().enumerate() {
            let neighbors = graph.neighbors(v, RelationId(t))?;
            let selected = select_neighbors(neighbors, &score_values, k);
            let padding = pooling_mix(&selected, k, &mut mix);
            provenance[i].push(RelationProvenance {
                gates: selected.iter().map(|&u| gate_values[u]).collect(),
                selected,
                padding,
            });
        }
        let pooled = tape.row_mix(gated, Arc::new(mix))?;
        slices.push(tape.reshape(pooled, &[nodes.len(), 1, k, d])?);
    }
    let stacked = tape.concat(&slices, 1)?;
    Ok((stacked, provenance))
}

/// Pools node `v` over all relations using the graph's own features.
pub fn pool_all(
    graph: &HeteroGraph,
    v: usize,
    params: &PoolingParams,
) -> Result<PooledNeighborhood> {
    let mut tape = Tape::new();
    let features = tape.constant(graph.features().clone());
    let projections: Vec<Var> = params
        .projections
        .iter()
        .map(|p| tape.constant(p.clone()))
        .collect();
    let (x, mut provenance) = pool_nodes(&mut tape, graph, features, &projections, params.k, &[v])?;
    let shape = tape.shape(x)[1..].to_vec();
    Ok(PooledNeighborhood {
        x: tape.value(x).reshape(&shape)?,
        provenance: provenance.pop().unwrap_or_default(),
    })
}

/// Pools node `v` under a single relation: a `k × D` block and its provenance.
pub fn pool_relation(
    graph: &HeteroGraph,
    v: usize,
    t: RelationId,
    params: &PoolingParams,
) -> Result<(Tensor, RelationProvenance)> {
    if t.0 >= graph.relation_count() {
        return Err(GraphError::UnknownRelation(t.0).into());
    }
    let pooled = pool_all(graph, v, params)?;
    let (k, d) = (params.k, graph.feature_dim());
    let start = t.0 * k * d;
    let block = Tensor::new(vec![k, d], pooled.x.data()[start..start + k * d].to_vec())?;
    Ok((block, pooled.provenance[t.0].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeSpec;

    fn node(t: &str, f: &[f64]) -> NodeSpec {
        NodeSpec {
            node_type: t.into(),
            label: None,
            features: f.to_vec(),
        }
    }

    #[test]
    fn score_on_basis_vector_reads_first_feature() {
        let x = Tensor::from_rows(&[vec![3.0, 1.0], vec![-2.0, 5.0]]).unwrap();
        let s = score(&x, &Tensor::vector(vec![1.0, 0.0])).unwrap();
        assert_eq!(s.data(), &[3.0, -2.0]);
        let scaled = score(&x, &Tensor::vector(vec![7.5, 0.0])).unwrap();
        assert_eq!(scaled.data(), s.data());
    }

    #[test]
    fn score_rejects_zero_projection() {
        let x = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let err = score(&x, &Tensor::zeros(&[2])).unwrap_err();
        assert!(matches!(
            err,
            crate::Error::Tensor(TensorError::DegenerateProjection(_))
        ));
    }

    #[test]
    fn topk_order_and_ties() {
        assert_eq!(rank_topk(&[0.1, 0.9, 0.5], 2), vec![1, 2]);
        assert_eq!(rank_topk(&[0.3, 0.3, 0.3], 2), vec![0, 1]);
        assert_eq!(rank_topk(&[0.3], 4), vec![0]);
        assert!(rank_topk(&[], 2).is_empty());
    }

    #[test]
    fn select_neighbors_ignores_storage_order() {
        let scores = [0.0, 0.5, 0.5, 0.9, 0.1];
        assert_eq!(select_neighbors(&[4, 2, 1, 3], &scores, 3), vec![3, 1, 2]);
        assert_eq!(select_neighbors(&[1, 2, 3, 4], &scores, 3), vec![3, 1, 2]);
    }

    /// Node 1 has a single "a"-neighbor (node 0) with features [2, 4];
    /// the projection is orthogonal so its score is 0 and its gate 0.5.
    #[test]
    fn single_neighbor_is_gated_and_mean_padded() {
        let g = HeteroGraph::build(
            vec![node("A", &[2.0, 4.0]), node("B", &[0.0, 0.0])],
            vec![(0, 1, "a".into()), (1, 0, "b".into())],
        )
        .unwrap();
        let params = PoolingParams::new(
            vec![
                Tensor::vector(vec![2.0, -1.0]),
                Tensor::vector(vec![1.0, 0.0]),
            ],
            2,
        )
        .unwrap();
        let (block, prov) = pool_relation(&g, 1, RelationId(0), &params).unwrap();
        assert_eq!(block.data(), &[1.0, 2.0, 1.0, 2.0]);
        assert_eq!(prov.selected, vec![0]);
        assert_eq!(prov.gates, vec![0.5]);
        assert_eq!(prov.padding, Padding::MeanPadded { from: 1 });

        let pooled = pool_all(&g, 1, &params).unwrap();
        assert_eq!(pooled.x.shape(), &[2, 2, 2]);
        assert!(pooled.x.data()[4..].iter().all(|&x| x == 0.0));
        assert_eq!(pooled.provenance[1].padding, Padding::ZeroRelation);
    }

    #[test]
    fn full_relation_keeps_top_rows_in_score_order() {
        let g = HeteroGraph::build(
            vec![
                node("A", &[1.0, 0.0]),
                node("A", &[3.0, 0.0]),
                node("A", &[2.0, 0.0]),
                node("B", &[0.0, 0.0]),
            ],
            vec![
                (0, 3, "a".into()),
                (1, 3, "a".into()),
                (2, 3, "a".into()),
                (3, 0, "b".into()),
            ],
        )
        .unwrap();
        let params = PoolingParams::new(
            vec![
                Tensor::vector(vec![1.0, 0.0]),
                Tensor::vector(vec![0.0, 1.0]),
            ],
            2,
        )
        .unwrap();
        let (block, prov) = pool_relation(&g, 3, RelationId(0), &params).unwrap();
        assert_eq!(prov.selected, vec![1, 2]);
        assert_eq!(prov.padding, Padding::None);
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let expected = [3.0 * sig(3.0), 0.0, 2.0 * sig(2.0), 0.0];
        for (a, b) in block.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_relation_and_bad_params() {
        let g = HeteroGraph::build(vec![node("A", &[1.0])], vec![]).unwrap();
        let params = PoolingParams::new(vec![], 2).unwrap();
        assert!(pool_relation(&g, 0, RelationId(0), &params).is_err());
        assert!(PoolingParams::new(vec![], 0).is_err());
        let pooled = pool_all(&g, 0, &params).unwrap();
        assert_eq!(pooled.x.shape(), &[0, 2, 1]);
    }
}
