//! Principal component analysis via cyclic Jacobi rotations.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    /// Descending.
    pub values: Vec<f64>,
    /// Row `i` is the unit eigenvector of `values[i]`, sign-fixed so that its
    /// largest-magnitude component is positive.
    pub vectors: Tensor,
}

fn square(a: &Tensor, op: &'static str) -> Result<usize> {
    if a.rank() != 2 || a.rows() != a.cols() {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: vec![a.rows(), a.rows()],
        }
        .into());
    }
    Ok(a.rows())
}

/// Flips `v` so its largest-magnitude entry (the first, on ties) is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Cyclic Jacobi: sweep every off-diagonal pair with a rotation that zeroes
/// it, until the off-diagonal mass is negligible.
pub fn symmetric_eigen(a: &Tensor) -> Result<SymmetricEigen> {
    let n = square(a, "symmetric_eigen")?;
    let mut m = a.data().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (m[p * n + p], m[q * n + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let mut values = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n * n);
    for &i in &order {
        values.push(m[i * n + i]);
        let mut col: Vec<f64> = (0..n).map(|k| v[k * n + i]).collect();
        fix_sign(&mut col);
        rows.extend(col);
    }
    Ok(SymmetricEigen {
        values,
        vectors: Tensor::new(vec![n, n], rows)?,
    })
}

/// Column means and the covariance of the centered rows, divided by
/// `N − 1` (or `N` for a single row).
pub fn covariance(x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    if x.rank() != 2 || x.rows() == 0 {
        return Err(TensorError::EmptyReduction { axis: 0 }.into());
    }
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for i in 0..n {
        for (c, (v, m)) in centered.iter_mut().zip(x.row(i).iter().zip(&mean)) {
            *c = v - m;
        }
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += centered[a] * centered[b];
            }
        }
    }
    let denom = n.saturating_sub(1).max(1) as f64;
    for a in 0..d {
        for b in a..d {
            cov[a * d + b] /= denom;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    Ok((mean, Tensor::new(vec![d, d], cov)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `[components, D]`, one principal direction per row.
    pub components: Tensor,
    /// Variance along each component.
    pub variances: Vec<f64>,
    /// `[N, components]`
    pub projected: Tensor,
}

/// Projects the rows of `x` onto its top `components` principal directions.
pub fn pca(x: &Tensor, components: usize) -> Result<Pca> {
    let (mean, cov) = covariance(x)?;
    let d = x.cols();
    if components > d {
        return Err(TensorError::IndexOutOfRange {
            index: components,
            extent: d,
        }
        .into());
    }
    let eig = symmetric_eigen(&cov)?;
    let top = Tensor::new(
        vec![components, d],
        eig.vectors.data()[..components * d].to_vec(),
    )?;
    let n = x.rows();
    let mut projected = vec![0.0; n * components];
    for i in 0..n {
        for c in 0..components {
            projected[i * components + c] = x
                .row(i)
                .iter()
                .zip(&mean)
                .zip(top.row(c))
                .map(|((v, m), w)| (v - m) * w)
                .sum();
        }
    }
    Ok(Pca {
        mean,
        variances: eig.values[..components].to_vec(),
        components: top,
        projected: Tensor::new(vec![n, components], projected)?,
    })
}
