//! Seeded synthetic author/paper graphs.
//!
//! Every author belongs to one of `C` communities and is either senior or
//! junior. Each paper is written by one senior and one junior author, drawn
//! uniformly, and its label is the community of its senior author. Author
//! features carry the seniority level in coordinate 0 and a one-hot of the
//! community, scaled by a random per-author magnitude, in the next `C`
//! coordinates; paper features are zero.
//!
//! Which co-author decides the label is visible only through the ordering of
//! the two authors along the seniority coordinate, while the jittered
//! magnitudes hide it from any order-free summary of the pair. With
//! `self_loops`, every paper also links to itself under a `self` edge type,
//! so deep stacks can carry a paper's earlier representations forward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GraphError;
use crate::graph::{HeteroGraph, NodeSpec};

pub const AUTHOR: &str = "author";
pub const PAPER: &str = "paper";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub authors: usize,
    pub papers: usize,
    pub classes: usize,
    /// Feature width; at least `classes + 1`, extra coordinates are zero.
    pub feature_dim: usize,
    /// Seniority coordinate is `+seniority` for senior and `−seniority` for
    /// junior authors.
    pub seniority: f64,
    /// Community one-hot magnitude range, drawn log-uniformly.
    pub magnitude: (f64, f64),
    /// Probability that a paper's label is replaced by a uniform draw.
    pub noise: f64,
    pub self_loops: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            authors: 50,
            papers: 150,
            classes: 3,
            feature_dim: 4,
            seniority: 0.2,
            magnitude: (0.05, 0.15),
            noise: 0.0,
            self_loops: true,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: &str| Err(GraphError::InvalidGenerator(m.to_string()));
        if self.papers == 0 {
            return bad("at least one paper is required");
        }
        if self.authors < 2 {
            return bad("at least two authors are required");
        }
        if self.classes == 0 || self.feature_dim < self.classes + 1 {
            return bad("feature_dim must be at least classes + 1");
        }
        let (lo, hi) = self.magnitude;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("magnitude range must satisfy 0 < lo <= hi");
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad("noise must lie in [0, 1]");
        }
        if !self.seniority.is_finite() {
            return bad("seniority must be finite");
        }
        Ok(())
    }
}

/// Generated graph plus the hidden quantities behind its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthGraph {
    pub graph: HeteroGraph,
    /// Community of each author (indexed by author node id).
    pub community: Vec<usize>,
    pub senior: Vec<bool>,
    /// Noise-free label of each paper, in paper order.
    pub clean_labels: Vec<usize>,
}

pub fn synth_graph(spec: &SynthSpec, seed: u64) -> Result<HeteroGraph, GraphError> {
    Ok(synth_graph_detailed(spec, seed)?.graph)
}

/// Node ids: authors `0..authors`, then papers.
pub fn synth_graph_detailed(spec: &SynthSpec, seed: u64) -> Result<SynthGraph, GraphError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, d) = (spec.classes, spec.feature_dim);

    // Alternate seniority so both pools are non-empty, then shuffle roles.
    let mut senior: Vec<bool> = (0..spec.authors).map(|a| a % 2 == 0).collect();
    for i in (1..senior.len()).rev() {
        senior.swap(i, rng.gen_range(0..=i));
    }
    let community: Vec<usize> = (0..spec.authors).map(|_| rng.gen_range(0..c)).collect();
    let (ln_lo, ln_hi) = (spec.magnitude.0.ln(), spec.magnitude.1.ln());

    let mut nodes = Vec::with_capacity(spec.authors + spec.papers);
    for a in 0..spec.authors {
        let mut features = vec![0.0; d];
        features[0] = if senior[a] {
            spec.seniority
        } else {
            -spec.seniority
        };
        let m = if ln_hi > ln_lo {
            rng.gen_range(ln_lo..ln_hi).exp()
        } else {
            spec.magnitude.0
        };
        features[1 + community[a]] = m;
        nodes.push(NodeSpec {
            node_type: AUTHOR.into(),
            label: None,
            features,
        });
    }

    let seniors: Vec<usize> = (0..spec.authors).filter(|&a| senior[a]).collect();
    let juniors: Vec<usize> = (0..spec.authors).filter(|&a| !senior[a]).collect();
    let mut edges = Vec::new();
    let mut clean_labels = Vec::with_capacity(spec.papers);
    for p in 0..spec.papers {
        let id = spec.authors + p;
        let lead = seniors[rng.gen_range(0..seniors.len())];
        let other = juniors[rng.gen_range(0..juniors.len())];
        for a in [lead, other] {
            edges.push((a, id, "writes".to_string()));
            edges.push((id, a, "written_by".to_string()));
        }
        let clean = community[lead];
        let label = if rng.gen_bool(spec.noise) {
            rng.gen_range(0..c)
        } else {
            clean
        };
        clean_labels.push(clean);
        nodes.push(NodeSpec {
            node_type: PAPER.into(),
            label: Some(label),
            features: vec![0.0; d],
        });
    }
    if spec.self_loops {
        for v in spec.authors..nodes.len() {
            edges.push((v, v, "self".to_string()));
        }
    }
    Ok(SynthGraph {
        graph: HeteroGraph::build(nodes, edges)?,
        community,
        senior,
        clean_labels,
    })
}
