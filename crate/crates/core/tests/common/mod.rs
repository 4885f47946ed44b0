//! Independent reference implementations and shared fixtures for the
//! integration tests. Nothing here calls the library code it checks.

#![allow(dead_code)]

pub mod props;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relconv::graph::NodeSpec;
use relconv::{HeteroGraph, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/synth")
}

/// Cross-relation convolution as four nested loops over plain slices:
/// `y[p][l] = Σ_t Σ_j Σ_d K[p][t][j][d] · X[t][l + j][d]`.
pub fn conv_oracle(
    x: &[f64],
    kernels: &[f64],
    t: usize,
    k: usize,
    s: usize,
    d: usize,
    p: usize,
) -> Vec<Vec<f64>> {
    let l_out = k - s + 1;
    let mut y = vec![vec![0.0; l_out]; p];
    for (f, row) in y.iter_mut().enumerate() {
        for (l, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for r in 0..t {
                for j in 0..s {
                    for c in 0..d {
                        acc += kernels[((f * t + r) * s + j) * d + c] * x[(r * k + l + j) * d + c];
                    }
                }
            }
            *out = acc;
        }
    }
    y
}

/// Pooled `k × D` block of one relation from its neighbor feature rows:
/// project onto `v / ‖v‖`, keep the `k` best (ties to the smaller id), gate by
/// the sigmoid of the score, then pad with the mean gated row (or zeros when
/// there are no neighbors).
pub fn pool_oracle(ids: &[usize], rows: &[Vec<f64>], v: &[f64], k: usize) -> Vec<Vec<f64>> {
    let d = v.len();
    if ids.is_empty() {
        return vec![vec![0.0; d]; k];
    }
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scores: Vec<f64> = rows
        .iter()
        .map(|x| x.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / norm)
        .collect();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(ids[a].cmp(&ids[b]))
    });
    order.truncate(k);
    let mut out: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| {
            let g = 1.0 / (1.0 + (-scores[i]).exp());
            rows[i].iter().map(|x| g * x).collect()
        })
        .collect();
    let m = out.len();
    let mean: Vec<f64> = (0..d)
        .map(|c| out.iter().map(|r| r[c]).sum::<f64>() / m as f64)
        .collect();
    while out.len() < k {
        out.push(mean.clone());
    }
    out
}

/// One pooling instance: a graph whose node 0 is the target, with `m_t`
/// neighbors under edge type `r{t}`, and the same neighborhoods as plain
/// lists for the oracle.
pub struct PoolingCase {
    pub graph: HeteroGraph,
    pub k: usize,
    pub projections: Vec<Tensor>,
    /// Per relation: neighbor ids of node 0.
    pub neighborhoods: Vec<Vec<usize>>,
    pub features: Vec<Vec<f64>>,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<(usize, usize, String)>,
}

/// Random case; neighbor counts cover empty, fewer than `k` and more than
/// `k`. Each edge type also links node 1 to node 2 so that it exists even
/// when node 0 has no such neighbors. Edges are inserted in random order.
pub fn pooling_case(rng: &mut impl Rng, relations: usize, k: usize, d: usize) -> PoolingCase {
    let n = 2 * k + 4;
    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let nodes: Vec<NodeSpec> = features
        .iter()
        .map(|f| NodeSpec {
            node_type: "n".into(),
            label: None,
            features: f.clone(),
        })
        .collect();
    let mut edges = Vec::new();
    let mut neighborhoods = Vec::new();
    for t in 0..relations {
        let m = rng.gen_range(0..=(2 * k).min(n - 1));
        let mut pool: Vec<usize> = (1..n).collect();
        pool.shuffle(rng);
        let ids: Vec<usize> = pool[..m].to_vec();
        let name = format!("r{t}");
        for &u in &ids {
            edges.push((u, 0, name.clone()));
        }
        edges.push((1, 2, name));
        neighborhoods.push(ids);
    }
    edges.shuffle(rng);
    let projections = (0..relations)
        .map(|_| Tensor::vector((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect();
    PoolingCase {
        graph: HeteroGraph::build(nodes.clone(), edges.clone()).unwrap(),
        k,
        projections,
        neighborhoods,
        features,
        nodes,
        edges,
    }
}

impl PoolingCase {
    /// Oracle `[T, k, D]` block of node 0, flattened.
    pub fn expected(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (ids, v) in self.neighborhoods.iter().zip(&self.projections) {
            let rows: Vec<Vec<f64>> = ids.iter().map(|&u| self.features[u].clone()).collect();
            for row in pool_oracle(ids, &rows, v.data(), self.k) {
                out.extend(row);
            }
        }
        out
    }
}

/// Classical Jacobi with the largest off-diagonal pivot each step. Returns
/// eigenvalues descending and the matching unit eigenvectors.
pub fn jacobi_oracle(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..10_000 * n.max(1) {
        let (mut p, mut q, mut big) = (0, 1, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                if m[i][j].abs() > big {
                    big = m[i][j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        if big < 1e-300 || n < 2 {
            break;
        }
        let phi = 0.5 * (2.0 * m[p][q]).atan2(m[q][q] - m[p][p]);
        let (c, s) = (phi.cos(), phi.sin());
        for row in m.iter_mut() {
            let (x, y) = (row[p], row[q]);
            row[p] = c * x - s * y;
            row[q] = s * x + c * y;
        }
        for k in 0..n {
            let (x, y) = (m[p][k], m[q][k]);
            m[p][k] = c * x - s * y;
            m[q][k] = s * x + c * y;
        }
        for row in v.iter_mut() {
            let (x, y) = (row[p], row[q]);
            row[p] = c * x - s * y;
            row[q] = s * x + c * y;
        }
        m[p][q] = 0.0;
        m[q][p] = 0.0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap());
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k][i]).collect())
        .collect();
    (values, vectors)
}

/// Random symmetric matrix with well-separated eigenvalues, so that
/// eigenvectors are determined up to sign.
pub fn separated_symmetric(rng: &mut impl Rng, n: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for b in &q {
            let dot: f64 = x.iter().zip(b).map(|(a, c)| a * c).sum();
            x.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
        }
        let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-3 {
            q.push(x.iter().map(|a| a / norm).collect());
        }
    }
    let lambdas: Vec<f64> = (0..n)
        .map(|i| (n - i) as f64 + rng.gen_range(-0.3..0.3))
        .collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|l| lambdas[l] * q[l][i] * q[l][j]).sum())
                .collect()
        })
        .collect()
}

/// Flips `v` so its largest-magnitude entry is positive.
pub fn canonical_sign(v: &[f64]) -> Vec<f64> {
    let big = v
        .iter()
        .cloned()
        .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if big < 0.0 {
        v.iter().map(|x| -x).collect()
    } else {
        v.to_vec()
    }
}

/// Largest |library − oracle| over `cases` random convolution instances,
/// with `|T|, k, s, D, P` each drawn small.
pub fn conv_max_diff(cases: usize, seed: u64) -> f64 {
    use relconv::conv::{conv_all, FilterBank};
    use relconv::pooling::PooledNeighborhood;
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let t = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=6);
        let s = rng.gen_range(1..=k);
        let d = rng.gen_range(1..=5);
        let p = rng.gen_range(1..=4);
        let x = random_tensor(&mut rng, &[t, k, d]);
        let kernels = random_tensor(&mut rng, &[p, t, s, d]);
        let pooled = PooledNeighborhood {
            x: x.clone(),
            provenance: Vec::new(),
        };
        let got = conv_all(&pooled, &FilterBank::new(kernels.clone()).unwrap()).unwrap();
        let want = conv_oracle(x.data(), kernels.data(), t, k, s, d, p);
        assert_eq!(got.shape(), &[p, k - s + 1]);
        for (f, row) in want.iter().enumerate() {
            for (l, w) in row.iter().enumerate() {
                worst = worst.max((got.at(&[f, l]) - w).abs());
            }
        }
    }
    worst
}

/// Pooling oracle comparison over `cases` random nodes. Returns the largest
/// deviation and how many relation blocks were empty, short, and full.
pub fn pooling_max_diff(cases: usize, seed: u64) -> (f64, [usize; 3]) {
    use relconv::pooling::{pool_all, PoolingParams};
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    let mut kinds = [0; 3];
    for _ in 0..cases {
        let t = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=4);
        let d = rng.gen_range(1..=4);
        let case = pooling_case(&mut rng, t, k, d);
        for ids in &case.neighborhoods {
            kinds[if ids.is_empty() {
                0
            } else if ids.len() < k {
                1
            } else {
                2
            }] += 1;
        }
        let params = PoolingParams::new(case.projections.clone(), k).unwrap();
        let got = pool_all(&case.graph, 0, &params).unwrap();
        assert_eq!(got.x.shape(), &[t, k, d]);
        for (a, b) in got.x.data().iter().zip(case.expected()) {
            worst = worst.max((a - b).abs());
        }
    }
    (worst, kinds)
}

/// Eigen-decomposition of random separated symmetric matrices against the
/// pivoting Jacobi oracle; largest deviation over values and vectors.
pub fn eigen_max_diff(cases: usize, seed: u64) -> f64 {
    use relconv::pca::symmetric_eigen;
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = rng.gen_range(1..=8);
        let a = separated_symmetric(&mut rng, n);
        let got = symmetric_eigen(&Tensor::from_rows(&a).unwrap()).unwrap();
        let (values, vectors) = jacobi_oracle(&a);
        for i in 0..n {
            worst = worst.max((got.values[i] - values[i]).abs());
            let want = canonical_sign(&vectors[i]);
            for (x, y) in got.vectors.row(i).iter().zip(&want) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    worst
}

/// Points on a random 2-D plane inside `h` dimensions, shifted off the origin.
pub fn planted_plane(rng: &mut impl Rng, n: usize, h: usize) -> Tensor {
    let basis = separated_symmetric(rng, h);
    let (_, vecs) = jacobi_oracle(&basis);
    let offset: Vec<f64> = (0..h).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0));
        rows.push(
            (0..h)
                .map(|j| offset[j] + a * vecs[0][j] + b * vecs[1][j])
                .collect(),
        );
    }
    Tensor::from_rows(&rows).unwrap()
}

/// Largest error when rebuilding planted planar points from their top-2 PCA
/// coordinates.
pub fn planted_reconstruction_error(cases: usize, seed: u64) -> f64 {
    use relconv::pca::pca;
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let h = rng.gen_range(2..=12);
        let x = planted_plane(&mut rng, 40, h);
        let p = pca(&x, 2).unwrap();
        for i in 0..x.rows() {
            for j in 0..h {
                let rebuilt = p.mean[j]
                    + (0..2)
                        .map(|c| p.projected.at(&[i, c]) * p.components.at(&[c, j]))
                        .sum::<f64>();
                worst = worst.max((rebuilt - x.at(&[i, j])).abs());
            }
        }
    }
    worst
}
