//! Tab-separated dataset directories.
//!
//! ```text
//! nodes.tsv     node_id <TAB> node_type <TAB> label     (label empty if unlabeled)
//! edges.tsv     src_id  <TAB> dst_id    <TAB> edge_type
//! features.tsv  node_id <TAB> space-separated floats
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. Node ids must be the
//! dense range `0..N`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::GraphError;
use crate::graph::{HeteroGraph, NodeSpec};

pub const NODES_FILE: &str = "nodes.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.tsv";

fn read(dir: &Path, name: &str) -> Result<String, GraphError> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|source| GraphError::Io { path, source })
}

/// Non-comment lines with their 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn malformed(file: &str, line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Malformed {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_id(file: &str, line: usize, field: &str, what: &str) -> Result<usize, GraphError> {
    field
        .trim()
        .parse()
        .map_err(|_| malformed(file, line, format!("invalid {what} {field:?}")))
}

/// Loads and indexes a dataset directory. Heterogeneity problems are logged
/// as warnings, not errors.
pub fn load_dataset(dir: &Path) -> Result<HeteroGraph, GraphError> {
    let nodes_text = read(dir, NODES_FILE)?;
    let edges_text = read(dir, EDGES_FILE)?;
    let features_text = read(dir, FEATURES_FILE)?;

    let mut slots: Vec<Option<(String, Option<usize>)>> = Vec::new();
    for (line, text) in records(&nodes_text) {
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 3 && fields.len() != 2 {
            return Err(malformed(
                NODES_FILE,
                line,
                "expected node_id, node_type, label",
            ));
        }
        let id = parse_id(NODES_FILE, line, fields[0], "node id")?;
        let node_type = fields[1].trim();
        if node_type.is_empty() {
            return Err(malformed(NODES_FILE, line, "empty node type"));
        }
        let label = match fields.get(2).map(|s| s.trim()) {
            None | Some("") => None,
            Some(s) => Some(parse_id(NODES_FILE, line, s, "label")?),
        };
        if slots.len() <= id {
            slots.resize(id + 1, None);
        }
        if slots[id].is_some() {
            return Err(GraphError::DuplicateNode { line, id });
        }
        slots[id] = Some((node_type.to_string(), label));
    }
    let n = slots.len();
    if let Some(missing) = slots.iter().position(Option::is_none) {
        return Err(GraphError::MissingNode(missing));
    }

    let mut features: Vec<Option<Vec<f64>>> = vec![None; n];
    for (line, text) in records(&features_text) {
        let (id, values) = text
            .split_once('\t')
            .ok_or_else(|| malformed(FEATURES_FILE, line, "expected node_id<TAB>values"))?;
        let id = parse_id(FEATURES_FILE, line, id, "node id")?;
        if id >= n {
            return Err(GraphError::DanglingNode {
                file: FEATURES_FILE.into(),
                line,
                id,
                nodes: n,
            });
        }
        let row = values
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| malformed(FEATURES_FILE, line, format!("bad float: {e}")))?;
        if features[id].replace(row).is_some() {
            return Err(malformed(
                FEATURES_FILE,
                line,
                format!("duplicate features for node {id}"),
            ));
        }
    }

    let mut edges = Vec::new();
    for (line, text) in records(&edges_text) {
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 3 {
            return Err(malformed(
                EDGES_FILE,
                line,
                "expected src_id, dst_id, edge_type",
            ));
        }
        let src = parse_id(EDGES_FILE, line, fields[0], "source id")?;
        let dst = parse_id(EDGES_FILE, line, fields[1], "target id")?;
        for id in [src, dst] {
            if id >= n {
                return Err(GraphError::DanglingNode {
                    file: EDGES_FILE.into(),
                    line,
                    id,
                    nodes: n,
                });
            }
        }
        let edge_type = fields[2].trim();
        if edge_type.is_empty() {
            return Err(malformed(EDGES_FILE, line, "empty edge type"));
        }
        edges.push((src, dst, edge_type.to_string()));
    }

    let mut nodes = Vec::with_capacity(n);
    for (id, (slot, row)) in slots.into_iter().zip(features).enumerate() {
        let (node_type, label) = slot.expect("checked dense");
        let features = row.ok_or(GraphError::MissingFeatures(id))?;
        nodes.push(NodeSpec {
            node_type,
            label,
            features,
        });
    }
    let graph = HeteroGraph::build(nodes, edges)?;
    for warning in graph.validation_warnings() {
        log::warn!("{}: {warning}", dir.display());
    }
    Ok(graph)
}

/// Writes the graph in the directory format read by [`load_dataset`].
/// Floats use the shortest representation that parses back exactly.
pub fn save_dataset(g: &HeteroGraph, dir: &Path) -> Result<(), GraphError> {
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|source| GraphError::Io { path, source })
    };
    fs::create_dir_all(dir).map_err(|source| GraphError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    let mut nodes = String::from("# node_id\tnode_type\tlabel\n");
    let mut features = String::from("# node_id\tfeatures\n");
    for v in 0..g.node_count() {
        let label = g.label(v).map(|l| l.to_string()).unwrap_or_default();
        nodes.push_str(&format!("{v}\t{}\t{label}\n", g.node_type_name(v)));
        let width = g.type_feature_dims()[g.node_type_of(v)];
        let row: Vec<String> = g.features().row(v)[..width]
            .iter()
            .map(|x| format!("{x:?}"))
            .collect();
        features.push_str(&format!("{v}\t{}\n", row.join(" ")));
    }
    let mut edges = String::from("# src_id\tdst_id\tedge_type\n");
    for e in g.edges() {
        edges.push_str(&format!("{}\t{}\t{}\n", e.src, e.dst, g.edge_type_name(e)));
    }
    write(NODES_FILE, nodes)?;
    write(EDGES_FILE, edges)?;
    write(FEATURES_FILE, features)
}

/// SHA-256 over the three dataset files, in a fixed order, as hex.
pub fn dataset_hash(dir: &Path) -> Result<String, GraphError> {
    let mut hasher = Sha256::new();
    for name in [NODES_FILE, EDGES_FILE, FEATURES_FILE] {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|source| GraphError::Io { path, source })?;
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}
