//! Invariants as plain functions of generated inputs, shared by the
//! property suite and the acceptance run.

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::seq::SliceRandom;
use rand::Rng;
use relconv::conv::{conv_all, FilterBank};
use relconv::graph::{split, NodeSpec};
use relconv::metrics::f1_scores;
use relconv::pooling::{pool_all, PooledNeighborhood, PoolingParams};
use relconv::synth::{synth_graph, SynthSpec};
use relconv::train::train;
use relconv::{HeteroGraph, Tensor, TrainConfig};

use super::{pooling_case, random_tensor, rng};

type Outcome = Result<(), TestCaseError>;

/// `(seed, |T|, k, D)`.
pub fn pooling_dims() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 1..5usize, 1..5usize, 1..5usize)
}

pub fn scale_invariance((seed, t, k, d): (u64, usize, usize, usize), c: f64) -> Outcome {
    let case = pooling_case(&mut rng(seed), t, k, d);
    let base = pool_all(
        &case.graph,
        0,
        &PoolingParams::new(case.projections.clone(), k).unwrap(),
    )
    .unwrap();
    let scaled: Vec<Tensor> = case.projections.iter().map(|v| v.scale(c)).collect();
    let other = pool_all(&case.graph, 0, &PoolingParams::new(scaled, k).unwrap()).unwrap();
    for (a, b) in base.provenance.iter().zip(&other.provenance) {
        prop_assert_eq!(&a.selected, &b.selected);
    }
    prop_assert!(base.x.max_abs_diff(&other.x) < 1e-12);
    Ok(())
}

pub fn permutation_invariance(dims: (u64, usize, usize, usize), shuffle_seed: u64) -> Outcome {
    let (seed, t, k, d) = dims;
    let case = pooling_case(&mut rng(seed), t, k, d);
    let mut edges = case.edges.clone();
    edges.shuffle(&mut rng(shuffle_seed));
    let permuted = HeteroGraph::build(case.nodes.clone(), edges).unwrap();
    let params = PoolingParams::new(case.projections.clone(), k).unwrap();
    let a = pool_all(&case.graph, 0, &params).unwrap();
    let b = pool_all(&permuted, 0, &params).unwrap();
    prop_assert_eq!(a, b);
    Ok(())
}

/// An empty relation pools to zeros and its kernel slice has no effect.
pub fn zero_relation((seed, t, k, d): (u64, usize, usize, usize)) -> Outcome {
    let mut r = rng(seed);
    let case = pooling_case(&mut r, t, k, d);
    let pooled = pool_all(
        &case.graph,
        0,
        &PoolingParams::new(case.projections.clone(), k).unwrap(),
    )
    .unwrap();
    let s = r.gen_range(1..=k);
    let kernels = random_tensor(&mut r, &[3, t, s, d]);
    let base = conv_all(&pooled, &FilterBank::new(kernels.clone()).unwrap()).unwrap();
    for (rel, ids) in case.neighborhoods.iter().enumerate() {
        if !ids.is_empty() {
            continue;
        }
        let block = &pooled.x.data()[rel * k * d..(rel + 1) * k * d];
        prop_assert!(block.iter().all(|&x| x == 0.0));
        let mut changed = kernels.clone();
        for p in 0..3 {
            let start = (p * t + rel) * s * d;
            for x in &mut changed.data_mut()[start..start + s * d] {
                *x = r.gen_range(-5.0..5.0);
            }
        }
        let out = conv_all(&pooled, &FilterBank::new(changed).unwrap()).unwrap();
        prop_assert_eq!(out, base.clone());
    }
    Ok(())
}

/// `(seed, |T|, k, s, D, P)` with `s ≤ k`.
pub fn conv_dims() -> impl Strategy<Value = (u64, usize, usize, usize, usize, usize)> {
    (any::<u64>(), 1..5usize, 1..6usize, 1..5usize, 1..4usize)
        .prop_flat_map(|(seed, t, k, d, p)| (Just(seed), Just(t), Just(k), 1..=k, Just(d), Just(p)))
}

fn conv(x: &Tensor, kernels: &Tensor) -> Tensor {
    let pooled = PooledNeighborhood {
        x: x.clone(),
        provenance: Vec::new(),
    };
    conv_all(&pooled, &FilterBank::new(kernels.clone()).unwrap()).unwrap()
}

pub fn conv_linearity(
    (seed, t, k, s, d, p): (u64, usize, usize, usize, usize, usize),
    a: f64,
    b: f64,
) -> Outcome {
    let mut r = rng(seed);
    let x1 = random_tensor(&mut r, &[t, k, d]);
    let x2 = random_tensor(&mut r, &[t, k, d]);
    let k1 = random_tensor(&mut r, &[p, t, s, d]);
    let k2 = random_tensor(&mut r, &[p, t, s, d]);
    let combine = |u: &Tensor, v: &Tensor| {
        Tensor::new(
            u.shape().to_vec(),
            u.data()
                .iter()
                .zip(v.data())
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
        .unwrap()
    };
    let tol = 1e-12 * (1.0 + a.abs() + b.abs()) * (t * s * d) as f64;
    let lhs = conv(&x1, &combine(&k1, &k2));
    let rhs = combine(&conv(&x1, &k1), &conv(&x1, &k2));
    prop_assert!(lhs.max_abs_diff(&rhs) < tol, "kernel linearity");
    let lhs = conv(&combine(&x1, &x2), &k1);
    let rhs = combine(&conv(&x1, &k1), &conv(&x2, &k1));
    prop_assert!(lhs.max_abs_diff(&rhs) < tol, "input linearity");
    Ok(())
}

/// Pooling gives `[T, k, D]` and convolution `[P, k − s + 1]` for every
/// size, including graphs with no relations.
pub fn shape_totality(seed: u64, t: usize, k: usize, d: usize) -> Outcome {
    let mut r = rng(seed);
    let case = pooling_case(&mut r, t, k, d);
    let pooled = pool_all(
        &case.graph,
        0,
        &PoolingParams::new(case.projections.clone(), k).unwrap(),
    )
    .unwrap();
    prop_assert_eq!(pooled.x.shape(), &[t, k, d]);
    prop_assert_eq!(pooled.provenance.len(), t);
    let s = r.gen_range(1..=k);
    let out = conv_all(
        &pooled,
        &FilterBank::new(random_tensor(&mut r, &[2, t, s, d])).unwrap(),
    )
    .unwrap();
    prop_assert_eq!(out.shape(), &[2, k - s + 1]);
    Ok(())
}

pub fn micro_is_accuracy(pairs: Vec<(usize, usize)>, classes: usize) -> Outcome {
    let pred: Vec<usize> = pairs.iter().map(|p| p.0 % classes).collect();
    let truth: Vec<usize> = pairs.iter().map(|p| p.1 % classes).collect();
    let (micro, macro_) = f1_scores(&pred, &truth, classes).unwrap();
    let accuracy =
        pred.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64;
    prop_assert!((micro - accuracy).abs() < 1e-12);
    prop_assert!((0.0..=1.0).contains(&macro_));
    Ok(())
}

pub fn split_cover(n: usize, unlabeled: usize, a: f64, b: f64, seed: u64) -> Outcome {
    let c = 1.0 - a - b;
    let mut nodes: Vec<NodeSpec> = (0..n)
        .map(|i| NodeSpec {
            node_type: "n".into(),
            label: Some(i % 3),
            features: vec![0.0],
        })
        .collect();
    for i in 0..unlabeled.min(n) {
        nodes[(i * 7) % n].label = None;
    }
    let g = HeteroGraph::build(nodes, Vec::new()).unwrap();
    let labeled = g.labeled_nodes();
    let Ok(parts) = split(&g, (a, b, c), seed) else {
        prop_assert!(labeled.len() < 3);
        return Ok(());
    };
    let mut all: Vec<usize> = parts
        .train
        .iter()
        .chain(&parts.val)
        .chain(&parts.test)
        .copied()
        .collect();
    all.sort_unstable();
    prop_assert_eq!(all, labeled.clone());
    let m = labeled.len() as f64;
    prop_assert_eq!(parts.train.len(), (m * a + 1e-9).floor() as usize);
    prop_assert_eq!(parts.val.len(), (m * b + 1e-9).floor() as usize);
    Ok(())
}

pub fn small_synth_config(seed: u64) -> (HeteroGraph, TrainConfig) {
    let spec = SynthSpec {
        authors: 12,
        papers: 30,
        ..SynthSpec::default()
    };
    let config = TrainConfig {
        filters: 4,
        hidden: 8,
        depth: 2,
        max_epochs: 6,
        patience: 3,
        lr: 0.01,
        seed,
        ..TrainConfig::default()
    };
    (synth_graph(&spec, seed).unwrap(), config)
}

pub fn determinism(seed: u64) -> Outcome {
    let (g, config) = small_synth_config(seed);
    let a = train(&g, &config).unwrap();
    let b = train(&g, &config).unwrap();
    prop_assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        prop_assert!(x.same_metrics(y), "{x:?} vs {y:?}");
    }
    prop_assert_eq!(a.model, b.model);
    Ok(())
}

/// Two ratios whose complement is also positive.
pub fn ratios() -> impl Strategy<Value = (f64, f64)> {
    (0.05..0.9f64, 0.05..0.9f64).prop_filter("third part positive", |(a, b)| a + b < 0.95)
}
