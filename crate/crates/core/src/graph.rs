//! Typed node/edge store with per-relation neighbor indexing.
//!
//! A relation is the triple `(source node type, edge type, target node type)`
//! of a directed edge `u → v`. Relations are enumerated in lexicographic
//! order of their type names; that order fixes the relation axis of every
//! pooled tensor and filter bank built over the graph.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GraphError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub source_type: String,
    pub edge_type: String,
    pub target_type: String,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.source_type, self.edge_type, self.target_type
        )
    }
}

/// Position of a relation in the graph's canonical enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub edge_type: usize,
}

/// Raw description of one node, used to assemble a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub node_type: String,
    pub label: Option<usize>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    node_types: Vec<String>,
    edge_types: Vec<String>,
    node_type_of: Vec<usize>,
    labels: Vec<Option<usize>>,
    edges: Vec<Edge>,
    features: Tensor,
    feature_dims: Vec<usize>,
    relations: Vec<Relation>,
    relation_index: Vec<Vec<Vec<usize>>>,
}

impl HeteroGraph {
    /// Assembles and indexes a graph from nodes (indexed by id) and directed
    /// `(src, dst, edge type)` edges.
    ///
    /// Feature rows must agree in length within a node type. When node types
    /// disagree, shorter rows are zero-padded to the widest type.
    pub fn build(
        nodes: Vec<NodeSpec>,
        edges: Vec<(usize, usize, String)>,
    ) -> Result<Self, GraphError> {
        let n = nodes.len();
        let node_types: Vec<String> = nodes
            .iter()
            .map(|s| s.node_type.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let edge_types: Vec<String> = edges
            .iter()
            .map(|(_, _, t)| t.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let type_id = |name: &str, names: &[String]| {
            names.binary_search_by(|x| x.as_str().cmp(name)).unwrap()
        };

        let node_type_of: Vec<usize> = nodes
            .iter()
            .map(|s| type_id(&s.node_type, &node_types))
            .collect();
        let mut feature_dims: Vec<Option<usize>> = vec![None; node_types.len()];
        for (id, spec) in nodes.iter().enumerate() {
            let slot = &mut feature_dims[node_type_of[id]];
            match *slot {
                None => *slot = Some(spec.features.len()),
                Some(d) if d != spec.features.len() => {
                    return Err(GraphError::Malformed {
                        file: "features".into(),
                        line: id,
                        message: format!(
                            "node {id} of type {} has {} features, expected {d}",
                            spec.node_type,
                            spec.features.len()
                        ),
                    })
                }
                Some(_) => {}
            }
        }
        let feature_dims: Vec<usize> = feature_dims.into_iter().map(|d| d.unwrap_or(0)).collect();
        let width = feature_dims.iter().copied().max().unwrap_or(0);
        let mut data = Vec::with_capacity(n * width);
        for spec in &nodes {
            data.extend_from_slice(&spec.features);
            data.extend(std::iter::repeat_n(0.0, width - spec.features.len()));
        }
        let features = Tensor::new(vec![n, width], data)?;

        let mut typed_edges = Vec::with_capacity(edges.len());
        for (src, dst, t) in &edges {
            for &id in [src, dst].iter() {
                if *id >= n {
                    return Err(GraphError::NodeOutOfRange {
                        node: *id,
                        nodes: n,
                    });
                }
            }
            typed_edges.push(Edge {
                src: *src,
                dst: *dst,
                edge_type: type_id(t, &edge_types),
            });
        }

        let mut graph = Self {
            node_types,
            edge_types,
            node_type_of,
            labels: nodes.iter().map(|s| s.label).collect(),
            edges: typed_edges,
            features,
            feature_dims,
            relations: Vec::new(),
            relation_index: Vec::new(),
        };
        graph.reindex();
        Ok(graph)
    }

    /// Rebuilds the relation enumeration and neighbor lists from the edge list.
    fn reindex(&mut self) {
        let relations: BTreeSet<Relation> =
            self.edges.iter().map(|e| self.relation_of(e)).collect();
        self.relations = relations.into_iter().collect();
        self.relation_index = self.build_index();
    }

    fn build_index(&self) -> Vec<Vec<Vec<usize>>> {
        let mut index = vec![vec![Vec::new(); self.node_count()]; self.relations.len()];
        for e in &self.edges {
            let r = self
                .relations
                .binary_search(&self.relation_of(e))
                .expect("relation enumerated from edges");
            index[r][e.dst].push(e.src);
        }
        for lists in &mut index {
            for list in lists.iter_mut() {
                list.sort_unstable();
            }
        }
        index
    }

    fn relation_of(&self, e: &Edge) -> Relation {
        Relation {
            source_type: self.node_types[self.node_type_of[e.src]].clone(),
            edge_type: self.edge_types[e.edge_type].clone(),
            target_type: self.node_types[self.node_type_of[e.dst]].clone(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_type_of.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_types(&self) -> &[String] {
        &self.node_types
    }

    pub fn edge_types(&self) -> &[String] {
        &self.edge_types
    }

    /// φ: node → node type id.
    pub fn node_type_of(&self, v: usize) -> usize {
        self.node_type_of[v]
    }

    pub fn node_type_name(&self, v: usize) -> &str {
        &self.node_types[self.node_type_of[v]]
    }

    /// ψ: edge → edge type name.
    pub fn edge_type_name(&self, e: &Edge) -> &str {
        &self.edge_types[e.edge_type]
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn relation_id(&self, relation: &Relation) -> Option<RelationId> {
        self.relations.binary_search(relation).ok().map(RelationId)
    }

    /// Feature matrix `X`, one row per node.
    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Raw feature width of each node type, before zero-padding.
    pub fn type_feature_dims(&self) -> &[usize] {
        &self.feature_dims
    }

    pub fn has_uniform_features(&self) -> bool {
        let d = self.feature_dim();
        self.feature_dims.iter().all(|&x| x == d)
    }

    pub fn label(&self, v: usize) -> Option<usize> {
        self.labels[v]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&v| self.labels[v].is_some())
            .collect()
    }

    /// Number of classes, `1 + max label`.
    pub fn class_count(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |&c| c + 1)
    }

    /// `N_v^t`: sources `u` of edges `u → v` under relation `t`, ascending.
    pub fn neighbors(&self, v: usize, t: RelationId) -> Result<&[usize], GraphError> {
        let lists = self
            .relation_index
            .get(t.0)
            .ok_or(GraphError::UnknownRelation(t.0))?;
        lists
            .get(v)
            .map(Vec::as_slice)
            .ok_or(GraphError::NodeOutOfRange {
                node: v,
                nodes: self.node_count(),
            })
    }

    /// True when the stored neighbor lists match a fresh rebuild from edges.
    pub fn index_is_consistent(&self) -> bool {
        self.build_index() == self.relation_index
    }

    /// Non-fatal problems: fewer than two edge types violates the
    /// heterogeneity condition the model is designed for.
    pub fn validation_warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        if self.edges.is_empty() {
            warnings.push("graph has no edges and therefore no relations".to_string());
        }
        if self.edge_types.len() <= 1 {
            warnings.push(format!(
                "graph has {} edge type(s); heterogeneous graphs need more than one",
                self.edge_types.len()
            ));
        }
        warnings
    }

    /// Returns a copy with the feature matrix replaced; the new matrix must
    /// have one row per node.
    pub fn with_features(&self, features: Tensor) -> Result<Self, GraphError> {
        if features.rank() != 2 || features.rows() != self.node_count() {
            return Err(GraphError::Tensor(
                crate::error::TensorError::ShapeMismatch {
                    op: "with_features",
                    left: self.features.shape().to_vec(),
                    right: features.shape().to_vec(),
                },
            ));
        }
        let mut g = self.clone();
        g.feature_dims = vec![features.cols(); g.node_types.len()];
        g.features = features;
        Ok(g)
    }
}

/// Disjoint train/validation/test cover of the labeled nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles the labeled nodes by `seed` and cuts them by `ratios`. Train and
/// validation sizes are floored; the remainder goes to test.
pub fn split(g: &HeteroGraph, ratios: (f64, f64, f64), seed: u64) -> Result<Split, GraphError> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(GraphError::InvalidRatios(ratios));
    }
    let mut labeled = g.labeled_nodes();
    let n = labeled.len();
    if n < 3 {
        return Err(GraphError::TooFewLabeled(n));
    }
    labeled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // Guard against products like 0.1 * 30 = 2.9999999999999996.
    let n_train = (n as f64 * a + 1e-9).floor() as usize;
    let n_val = (n as f64 * b + 1e-9).floor() as usize;
    let mut train = labeled[..n_train].to_vec();
    let mut val = labeled[n_train..n_train + n_val].to_vec();
    let mut test = labeled[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, val, test })
}
