//! Principal component analysis by block subspace iteration.
//!
//! A block of `p >= k` orthonormal vectors is repeatedly multiplied by the
//! sample covariance (applied as `X^T (X v) / (n - 1)`, never formed), then
//! re-orthonormalised; a Rayleigh-Ritz step with a Jacobi eigen-solver on the
//! `p x p` projected matrix extracts the leading directions. When `p == d` the
//! first Rayleigh-Ritz step is already the full eigendecomposition.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::matrix::dot;
use crate::Matrix;

pub const PCA_TOL: f64 = 1e-10;
pub const PCA_MAX_ITER: usize = 1000;
const BLOCK_MIN: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    /// `k x d`, orthonormal rows ordered by decreasing variance.
    pub components: Matrix,
    /// Variance along each component.
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub mean: Vec<f64>,
    /// `n x k` scores of the training rows.
    pub projection: Matrix,
    pub iterations: usize,
}

impl Pca {
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        self.components.iter_rows().map(|c| dot(c, &centered)).collect()
    }
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in decreasing order and the matching eigenvectors as
/// the columns of the returned matrix.
pub(crate) fn jacobi_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    let mut a = a.clone();
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, col, v.get(r, src));
        }
    }
    (values, vectors)
}

/// Orthonormalises `cols` in place (modified Gram-Schmidt, two passes).
/// Columns that collapse are replaced by fresh random directions.
fn orthonormalize(cols: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    for i in 0..cols.len() {
        let mut tries = 0;
        loop {
            let before = dot(&cols[i], &cols[i]).sqrt();
            for _ in 0..2 {
                for j in 0..i {
                    let (head, tail) = cols.split_at_mut(i);
                    let proj = dot(&head[j], &tail[0]);
                    for (x, q) in tail[0].iter_mut().zip(&head[j]) {
                        *x -= proj * q;
                    }
                }
            }
            let norm = dot(&cols[i], &cols[i]).sqrt();
            if norm > 1e-10 * before.max(f64::MIN_POSITIVE) && norm > 0.0 {
                cols[i].iter_mut().for_each(|x| *x /= norm);
                break;
            }
            tries += 1;
            assert!(tries < 100, "cannot complete an orthonormal basis");
            cols[i] = (0..cols[i].len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        }
    }
}

struct Covariance<'a> {
    centered: &'a Matrix,
    denom: f64,
}

impl Covariance<'_> {
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let xv: Vec<f64> = self.centered.iter_rows().map(|r| dot(r, v)).collect();
        let mut out = vec![0.0; v.len()];
        for (r, s) in self.centered.iter_rows().zip(xv) {
            for (o, x) in out.iter_mut().zip(r) {
                *o += s * x;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.denom);
        out
    }
}

/// Top-`k` principal axes of the mean-centred rows of `x`, each signed so its
/// largest-magnitude entry is positive.
pub fn pca_project(x: &Matrix, k: usize) -> Result<Pca> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 || k == 0 || k > d {
        return Err(EvalError::InvalidArgument(format!("pca of {n}x{d} data with k = {k}")));
    }
    if !x.all_finite() {
        return Err(EvalError::NonFinite);
    }
    let mean: Vec<f64> = (0..d).map(|j| x.iter_rows().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut centered = x.clone();
    for i in 0..n {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let denom = (n - 1) as f64;
    let total: f64 = centered.as_slice().iter().map(|v| v * v).sum::<f64>() / denom;
    if total <= 0.0 {
        return Err(EvalError::DegenerateData);
    }
    let cov = Covariance {
        centered: &centered,
        denom,
    };

    let p = d.min((2 * k + 8).max(BLOCK_MIN));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut block: Vec<Vec<f64>> = (0..p).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    if p == d {
        // the whole space: start from the identity
        for (i, col) in block.iter_mut().enumerate() {
            col.iter_mut().enumerate().for_each(|(j, v)| *v = f64::from(u8::from(i == j)));
        }
    } else {
        block = block.iter().map(|v| cov.apply(v)).collect();
    }

    let mut values = Vec::new();
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    for it in 1..=PCA_MAX_ITER {
        iterations = it;
        orthonormalize(&mut block, &mut rng);
        let images: Vec<Vec<f64>> = block.iter().map(|q| cov.apply(q)).collect();
        let mut small = Matrix::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let v = 0.5 * (dot(&block[i], &images[j]) + dot(&block[j], &images[i]));
                small.set(i, j, v);
                small.set(j, i, v);
            }
        }
        let (theta, u) = jacobi_eigen(&small);
        let combine = |basis: &[Vec<f64>], col: usize| -> Vec<f64> {
            let mut out = vec![0.0; d];
            for (r, b) in basis.iter().enumerate() {
                let c = u.get(r, col);
                out.iter_mut().zip(b).for_each(|(o, x)| *o += c * x);
            }
            out
        };
        let ritz: Vec<Vec<f64>> = (0..p).map(|c| combine(&block, c)).collect();
        let ritz_images: Vec<Vec<f64>> = (0..p).map(|c| combine(&images, c)).collect();
        let residual = (0..k)
            .map(|i| {
                ritz_images[i]
                    .iter()
                    .zip(&ritz[i])
                    .map(|(a, v)| (a - theta[i] * v).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        values = theta;
        vectors = ritz;
        if p == d || residual <= PCA_TOL * values[0].abs().max(f64::MIN_POSITIVE) {
            break;
        }
        block = ritz_images;
    }

    let mut components = Matrix::zeros(k, d);
    for (i, v) in vectors.iter().take(k).enumerate() {
        let norm = dot(v, v).sqrt();
        let pivot = v.iter().fold(0.0f64, |best, &x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (slot, x) in components.row_mut(i).iter_mut().zip(v) {
            *slot = sign * x / norm;
        }
    }
    let explained_variance: Vec<f64> = values.iter().take(k).map(|v| v.max(0.0)).collect();
    let explained_variance_ratio = explained_variance.iter().map(|v| v / total).collect();
    let mut projection = Matrix::zeros(n, k);
    for i in 0..n {
        for c in 0..k {
            projection.set(i, c, dot(centered.row(i), components.row(c)));
        }
    }
    Ok(Pca {
        components,
        explained_variance,
        explained_variance_ratio,
        mean,
        projection,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalises() {
        let a = Matrix::from_rows(&[vec![4.0, 1.0, 0.5], vec![1.0, 3.0, 0.2], vec![0.5, 0.2, 1.0]]);
        let (vals, vecs) = jacobi_eigen(&a);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        for c in 0..3 {
            let v: Vec<f64> = (0..3).map(|r| vecs.get(r, c)).collect();
            for r in 0..3 {
                let av: f64 = (0..3).map(|j| a.get(r, j) * v[j]).sum();
                assert!((av - vals[c] * v[r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn line_has_one_component() {
        let x = Matrix::from_rows(&(0..10).map(|i| vec![f64::from(i), f64::from(i)]).collect::<Vec<_>>());
        let p = pca_project(&x, 2).unwrap();
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-9);
        assert!(p.explained_variance_ratio[1].abs() < 1e-9);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.components.get(0, 0) - h).abs() < 1e-12 && (p.components.get(0, 1) - h).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_bad_shapes() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert!(matches!(pca_project(&x, 1), Err(EvalError::DegenerateData)));
        assert!(pca_project(&Matrix::from_rows(&[vec![1.0, 2.0]]), 1).is_err());
        assert!(pca_project(&Matrix::from_rows(&[vec![1.0], vec![2.0]]), 2).is_err());
    }

    #[test]
    fn wide_data_uses_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                let t = f64::from(i);
                (0..100)
                    .map(|j| 3.0 * (t * 0.3).sin() * f64::from(j % 7) + (t * 0.11).cos() * f64::from(j % 3) + rng.random_range(-0.1..0.1))
                    .collect()
            })
            .collect();
        let p = pca_project(&Matrix::from_rows(&rows), 2).unwrap();
        assert!(p.iterations > 1 && p.iterations < PCA_MAX_ITER);
        let c = &p.components;
        assert!((dot(c.row(0), c.row(0)) - 1.0).abs() < 1e-9);
        assert!(dot(c.row(0), c.row(1)).abs() < 1e-9);
        assert!(p.explained_variance[0] >= p.explained_variance[1]);
    }
}
