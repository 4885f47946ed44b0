//! Stacked pooling + convolution layers with a softmax classification head.
//!
//! Layer `ℓ` pools over the feature matrix produced by layer `ℓ − 1` (the raw
//! node features for the first layer), so depth `L` lets information travel
//! `L` hops. Every layer owns its projections, filters and MLP.
//!
//! When node types have different raw feature widths, a per-type linear map
//! first brings every node to the common padded width.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Reduce, Tape, Var};
use crate::config::TrainConfig;
use crate::conv::{FilterBank, Mlp, MlpVars};
use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, Relation};
use crate::pooling::{pool_nodes, PoolingParams, RelationProvenance};
use crate::tensor::Tensor;

const CHECKPOINT_FORMAT: &str = "relconv-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Norm below which a projection vector is considered collapsed.
pub const MIN_PROJECTION_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Input,
    Projection,
    Kernels,
    Mlp,
    Head,
}

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            Self::Input => "input",
            Self::Projection => "v_t",
            Self::Kernels => "kernels",
            Self::Mlp => "mlp",
            Self::Head => "head",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Zero,
}

/// Name, group and initializer of one trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub group: ParamGroup,
    init: Init,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub pooling: PoolingParams,
    /// `None` for the mean-aggregation variant.
    pub filters: Option<FilterBank>,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub relations: Vec<Relation>,
    pub node_types: Vec<String>,
    pub type_dims: Vec<usize>,
    pub classes: usize,
    /// Per-node-type input maps; empty when all types share one width.
    pub input: Vec<Tensor>,
    pub layers: Vec<LayerParams>,
    pub head: Head,
}

/// Uniform `(−a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(
    fan_in: usize,
    fan_out: usize,
    shape: &[usize],
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::ZeroFan(fan_in, fan_out));
    }
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-a..a)).collect();
    Ok(Tensor::new(shape.to_vec(), data)?)
}

/// Independent random stream per named tensor, so adding or removing one
/// tensor never shifts the draws of another.
fn stream(seed: u64, name: &str, salt: u64) -> ChaCha8Rng {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(hash);
    rng
}

/// Tape handles of one bound layer.
struct LayerVars {
    projections: Vec<Var>,
    kernels: Option<Var>,
    mlp: MlpVars,
}

/// Result of [`Model::forward`].
pub struct ForwardPass {
    /// `[N, C]`
    pub logits: Var,
    /// Output of the last layer, `[N, H]`.
    pub embeddings: Var,
    /// One variable per parameter, in [`Model::param_specs`] order.
    pub params: Vec<Var>,
    /// Pooled tensor of each layer, `[N, T, k, D]`.
    pub pooled: Vec<Var>,
    /// Per layer, per node, per relation.
    pub selections: Vec<Vec<Vec<RelationProvenance>>>,
}

impl Model {
    /// Xavier-initialized model for `graph`.
    pub fn init(config: &TrainConfig, graph: &HeteroGraph) -> Result<Self> {
        let mut model = Self::skeleton(
            config,
            graph.relations().to_vec(),
            graph.node_types().to_vec(),
            graph.type_feature_dims().to_vec(),
            graph.class_count(),
        )?;
        let specs = model.param_specs();
        for (spec, tensor) in specs.iter().zip(model.params_mut()) {
            if let Init::Xavier { fan_in, fan_out } = spec.init {
                if !tensor.is_empty() {
                    let mut rng = stream(config.seed, &spec.name, 0);
                    *tensor = xavier_uniform(fan_in, fan_out, tensor.shape(), &mut rng)?;
                }
            }
        }
        Ok(model)
    }

    /// Model with every tensor zero, laid out for the given graph shape.
    fn skeleton(
        config: &TrainConfig,
        relations: Vec<Relation>,
        node_types: Vec<String>,
        type_dims: Vec<usize>,
        classes: usize,
    ) -> Result<Self> {
        config.validate()?;
        if classes == 0 {
            return Err(Error::Config("graph has no labeled nodes".into()));
        }
        let d0 = type_dims.iter().copied().max().unwrap_or(0);
        if d0 == 0 {
            return Err(Error::Config("node features are empty".into()));
        }
        let uniform = type_dims.iter().all(|&d| d == d0);
        let input = if uniform {
            Vec::new()
        } else {
            vec![Tensor::zeros(&[d0, d0]); type_dims.len()]
        };
        let (t, h) = (relations.len(), config.hidden);
        let l = config.k - config.window + 1;
        let mut layers = Vec::with_capacity(config.depth);
        for depth in 0..config.depth {
            let d = if depth == 0 { d0 } else { h };
            let mut width = if config.ablation {
                t * d
            } else {
                config.filters * l
            };
            if config.self_features {
                width += d;
            }
            let filters = (!config.ablation)
                .then(|| FilterBank::new(Tensor::zeros(&[config.filters, t, config.window, d])))
                .transpose()?;
            layers.push(LayerParams {
                pooling: PoolingParams::new(vec![Tensor::zeros(&[d]); t], config.k)?,
                filters,
                mlp: Mlp {
                    w1: Tensor::zeros(&[width, h]),
                    b1: Tensor::zeros(&[h]),
                    w2: Tensor::zeros(&[h, h]),
                    b2: Tensor::zeros(&[h]),
                },
            });
        }
        Ok(Self {
            config: config.clone(),
            relations,
            node_types,
            type_dims,
            classes,
            input,
            layers,
            head: Head {
                w: Tensor::zeros(&[h, classes]),
                b: Tensor::zeros(&[classes]),
            },
        })
    }

    pub fn input_dim(&self) -> usize {
        self.type_dims.iter().copied().max().unwrap_or(0)
    }

    /// Every trainable tensor in canonical order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let spec = |name: String, group, init| ParamSpec { name, group, init };
        let mut specs = Vec::new();
        let d0 = self.input_dim();
        for (i, name) in self.node_types.iter().enumerate().take(self.input.len()) {
            let init = Init::Xavier {
                fan_in: self.type_dims[i],
                fan_out: d0,
            };
            specs.push(spec(format!("input.{name}"), ParamGroup::Input, init));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for (t, v) in layer.pooling.projections.iter().enumerate() {
                let init = Init::Xavier {
                    fan_in: v.len(),
                    fan_out: 1,
                };
                specs.push(spec(
                    format!("layer{l}.v.{t}"),
                    ParamGroup::Projection,
                    init,
                ));
            }
            if let Some(bank) = &layer.filters {
                let s = bank.kernels.shape();
                let init = Init::Xavier {
                    fan_in: s[1] * s[2] * s[3],
                    fan_out: s[0],
                };
                specs.push(spec(format!("layer{l}.kernels"), ParamGroup::Kernels, init));
            }
            let (w1, w2) = (layer.mlp.w1.shape(), layer.mlp.w2.shape());
            let xavier = |s: &[usize]| Init::Xavier {
                fan_in: s[0],
                fan_out: s[1],
            };
            specs.push(spec(
                format!("layer{l}.mlp.w1"),
                ParamGroup::Mlp,
                xavier(w1),
            ));
            specs.push(spec(
                format!("layer{l}.mlp.b1"),
                ParamGroup::Mlp,
                Init::Zero,
            ));
            specs.push(spec(
                format!("layer{l}.mlp.w2"),
                ParamGroup::Mlp,
                xavier(w2),
            ));
            specs.push(spec(
                format!("layer{l}.mlp.b2"),
                ParamGroup::Mlp,
                Init::Zero,
            ));
        }
        let head = Init::Xavier {
            fan_in: self.head.w.shape()[0],
            fan_out: self.head.w.shape()[1],
        };
        specs.push(spec("head.w".into(), ParamGroup::Head, head));
        specs.push(spec("head.b".into(), ParamGroup::Head, Init::Zero));
        specs
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.input.iter().collect();
        for layer in &self.layers {
            out.extend(&layer.pooling.projections);
            if let Some(bank) = &layer.filters {
                out.push(&bank.kernels);
            }
            let m = &layer.mlp;
            out.extend([&m.w1, &m.b1, &m.w2, &m.b2]);
        }
        out.extend([&self.head.w, &self.head.b]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.input.iter_mut().collect();
        for layer in &mut self.layers {
            out.extend(&mut layer.pooling.projections);
            if let Some(bank) = &mut layer.filters {
                out.push(&mut bank.kernels);
            }
            let m = &mut layer.mlp;
            out.extend([&mut m.w1, &mut m.b1, &mut m.w2, &mut m.b2]);
        }
        out.extend([&mut self.head.w, &mut self.head.b]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Redraws projection vectors whose norm fell below
    /// [`MIN_PROJECTION_NORM`]. Returns the names of redrawn tensors.
    pub fn repair_projections(&mut self, salt: u64) -> Result<Vec<String>> {
        let seed = self.config.seed;
        let mut repaired = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (t, v) in layer.pooling.projections.iter_mut().enumerate() {
                if v.norm() < MIN_PROJECTION_NORM && !v.is_empty() {
                    let name = format!("layer{l}.v.{t}");
                    let mut rng = stream(seed, &name, salt.wrapping_add(1));
                    *v = xavier_uniform(v.len(), 1, v.shape(), &mut rng)?;
                    repaired.push(name);
                }
            }
        }
        Ok(repaired)
    }

    /// Fails when `graph` does not match the relation enumeration and
    /// feature layout this model was built for.
    pub fn check_compatible(&self, graph: &HeteroGraph) -> Result<()> {
        if graph.relations() != self.relations.as_slice() {
            let show = |r: &[Relation]| {
                r.iter()
                    .map(|r| r.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            return Err(Error::Incompatible(format!(
                "relations differ: model [{}], graph [{}]",
                show(&self.relations),
                show(graph.relations())
            )));
        }
        if graph.node_types() != self.node_types.as_slice()
            || graph.type_feature_dims() != self.type_dims.as_slice()
        {
            return Err(Error::Incompatible(format!(
                "node types or feature widths differ: model {:?} {:?}, graph {:?} {:?}",
                self.node_types,
                self.type_dims,
                graph.node_types(),
                graph.type_feature_dims()
            )));
        }
        Ok(())
    }

    /// Records the full forward pass on `tape`. Parameters become gradient
    /// leaves when `requires_grad` is set, constants otherwise.
    pub fn forward(
        &self,
        tape: &mut Tape,
        graph: &HeteroGraph,
        requires_grad: bool,
    ) -> Result<ForwardPass> {
        self.check_compatible(graph)?;
        let mut params = Vec::new();
        let mut bind = |tape: &mut Tape, t: &Tensor| {
            let v = tape.leaf(t.clone(), requires_grad);
            params.push(v);
            v
        };
        let input: Vec<Var> = self.input.iter().map(|w| bind(tape, w)).collect();
        let mut layer_vars = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let projections = layer
                .pooling
                .projections
                .iter()
                .map(|v| bind(tape, v))
                .collect();
            let kernels = layer.filters.as_ref().map(|b| bind(tape, &b.kernels));
            let m = &layer.mlp;
            let mlp = MlpVars {
                w1: bind(tape, &m.w1),
                b1: bind(tape, &m.b1),
                w2: bind(tape, &m.w2),
                b2: bind(tape, &m.b2),
            };
            layer_vars.push(LayerVars {
                projections,
                kernels,
                mlp,
            });
        }
        let head_w = bind(tape, &self.head.w);
        let head_b = bind(tape, &self.head.b);

        let raw = tape.constant(graph.features().clone());
        let mut x = if input.is_empty() {
            raw
        } else {
            project_inputs(tape, graph, raw, &input)?
        };
        let nodes: Vec<usize> = (0..graph.node_count()).collect();
        let mut pooled = Vec::with_capacity(layer_vars.len());
        let mut selections = Vec::with_capacity(layer_vars.len());
        for vars in &layer_vars {
            let (p, sel) = layer_on_tape(
                tape,
                graph,
                x,
                vars,
                self.config.k,
                self.config.self_features,
                &nodes,
            )?;
            pooled.push(p.0);
            selections.push(sel);
            x = p.1;
        }
        let logits = tape.matmul(x, head_w)?;
        let logits = tape.add_row(logits, head_b)?;
        Ok(ForwardPass {
            logits,
            embeddings: x,
            params,
            pooled,
            selections,
        })
    }

    /// Class scores for every node, `[N, C]`.
    pub fn logits(&self, graph: &HeteroGraph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, graph, false)?;
        Ok(tape.value(pass.logits).clone())
    }

    /// Last-layer embeddings for every node, `[N, H]`.
    pub fn embeddings(&self, graph: &HeteroGraph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, graph, false)?;
        Ok(tape.value(pass.embeddings).clone())
    }

    /// Arg-max class of every node; the lowest index wins ties.
    pub fn predict(&self, graph: &HeteroGraph) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(graph)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let specs = self.param_specs();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            relations: self.relations.clone(),
            node_types: self.node_types.clone(),
            type_dims: self.type_dims.clone(),
            classes: self.classes,
            tensors: specs
                .into_iter()
                .zip(self.params())
                .map(|(s, t)| NamedTensor {
                    name: s.name,
                    tensor: t.clone(),
                })
                .collect(),
        };
        let text = serde_json::to_string(&file).map_err(|e| Error::Checkpoint(e.to_string()))?;
        crate::io::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: CheckpointFile =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                file.format, file.version
            )));
        }
        let mut model = Self::skeleton(
            &file.config,
            file.relations,
            file.node_types,
            file.type_dims,
            file.classes,
        )?;
        let specs = model.param_specs();
        if specs.len() != file.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                file.tensors.len()
            )));
        }
        for ((spec, slot), stored) in specs.iter().zip(model.params_mut()).zip(file.tensors) {
            if spec.name != stored.name || slot.shape() != stored.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    stored.name,
                    stored.tensor.shape(),
                    spec.name,
                    slot.shape()
                )));
            }
            *slot = stored.tensor;
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    tensor: Tensor,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: TrainConfig,
    relations: Vec<Relation>,
    node_types: Vec<String>,
    type_dims: Vec<usize>,
    classes: usize,
    tensors: Vec<NamedTensor>,
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|i| {
            let row = t.row(i);
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Maps each node's raw features through the matrix of its type.
fn project_inputs(tape: &mut Tape, graph: &HeteroGraph, raw: Var, maps: &[Var]) -> Result<Var> {
    let mut blocks = Vec::with_capacity(maps.len());
    let mut position = vec![0; graph.node_count()];
    let mut offset = 0;
    for (ty, &w) in maps.iter().enumerate() {
        let members: Vec<usize> = (0..graph.node_count())
            .filter(|&v| graph.node_type_of(v) == ty)
            .collect();
        for (i, &v) in members.iter().enumerate() {
            position[v] = offset + i;
        }
        offset += members.len();
        let rows = tape.gather_rows(raw, &members)?;
        blocks.push(tape.matmul(rows, w)?);
    }
    let stacked = tape.concat(&blocks, 0)?;
    Ok(tape.gather_rows(stacked, &position)?)
}

type LayerOutput = ((Var, Var), Vec<Vec<RelationProvenance>>);

/// Pool, aggregate, and fuse for `nodes`. Returns `((pooled, embeddings), provenance)`.
fn layer_on_tape(
    tape: &mut Tape,
    graph: &HeteroGraph,
    features: Var,
    vars: &LayerVars,
    k: usize,
    self_features: bool,
    nodes: &[usize],
) -> Result<LayerOutput> {
    let (pooled, provenance) = pool_nodes(tape, graph, features, &vars.projections, k, nodes)?;
    let n = nodes.len();
    let mut input = match vars.kernels {
        Some(kernels) => tape.cross_conv(pooled, kernels)?,
        None => {
            let shape = tape.shape(pooled).to_vec();
            let mean = tape.reduce(Reduce::Mean, pooled, 2)?;
            tape.reshape(mean, &[n, shape[1] * shape[3]])?
        }
    };
    if self_features {
        let own = if nodes.len() == graph.node_count()
            && nodes.iter().enumerate().all(|(i, &v)| i == v)
        {
            features
        } else {
            tape.gather_rows(features, nodes)?
        };
        input = tape.concat(&[input, own], 1)?;
    }
    let out = vars.mlp.forward(tape, input)?;
    Ok(((pooled, out), provenance))
}

fn layer_value(
    graph: &HeteroGraph,
    features: &Tensor,
    params: &LayerParams,
    use_filters: bool,
    self_features: bool,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let kernels = match (&params.filters, use_filters) {
        (Some(bank), true) => Some(tape.constant(bank.kernels.clone())),
        (None, true) => return Err(Error::Config("layer has no filter bank".into())),
        (_, false) => None,
    };
    let vars = LayerVars {
        projections: params
            .pooling
            .projections
            .iter()
            .map(|v| tape.constant(v.clone()))
            .collect(),
        kernels,
        mlp: MlpVars::bind(&mut tape, &params.mlp, false),
    };
    let nodes: Vec<usize> = (0..graph.node_count()).collect();
    let ((_, out), _) = layer_on_tape(
        &mut tape,
        graph,
        x,
        &vars,
        params.pooling.k,
        self_features,
        &nodes,
    )?;
    Ok(tape.value(out).clone())
}

/// One convolutional layer over all nodes: pool, convolve, fuse. `[N, H]`.
pub fn layer_forward(
    graph: &HeteroGraph,
    features: &Tensor,
    params: &LayerParams,
    self_features: bool,
) -> Result<Tensor> {
    layer_value(graph, features, params, true, self_features)
}

/// The mean-aggregation variant: pooled rows of each relation are averaged,
/// the per-relation means concatenated, then fused. `[N, H]`.
pub fn ablation_forward(
    graph: &HeteroGraph,
    features: &Tensor,
    params: &LayerParams,
    self_features: bool,
) -> Result<Tensor> {
    layer_value(graph, features, params, false, self_features)
}
