use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::LeastSquares;

/// CR1 cluster-robust covariance for regressors `m` and residuals `u`.
pub fn cluster_cov(m: &Matrix, residuals: &[f64], clusters: &[u64]) -> Result<Matrix> {
    let names: Vec<String> = (0..m.ncols()).map(|j| format!("#{j}")).collect();
    let bread = LeastSquares::new(m, &names)?.gram_inverse();
    cluster_cov_with_bread(m, &bread, residuals, clusters).map(|(v, _)| v)
}

/// Sandwich `c B (sum_g s_g s_g') B` with `s_g = M_g' u_g` and
/// `c = G/(G-1) * (N-1)/(N-k)`. Also returns the cluster count `G`.
pub fn cluster_cov_with_bread(
    m: &Matrix,
    bread: &Matrix,
    residuals: &[f64],
    clusters: &[u64],
) -> Result<(Matrix, usize)> {
    let (n, k) = (m.nrows(), m.ncols());
    assert_eq!(residuals.len(), n);
    assert_eq!(clusters.len(), n);
    let mut index: BTreeMap<u64, usize> = BTreeMap::new();
    for &c in clusters {
        index.entry(c).or_insert(0);
    }
    let g = index.len();
    if g < 2 {
        return Err(Error::TooFewClusters(g));
    }
    for (i, slot) in index.values_mut().enumerate() {
        *slot = i;
    }
    let row_cluster: Vec<usize> = clusters.iter().map(|c| index[c]).collect();

    let mut scores = vec![0.0; g * k];
    for (j, col) in m.columns().enumerate() {
        for ((&x, &u), &c) in col.iter().zip(residuals).zip(&row_cluster) {
            scores[c * k + j] += x * u;
        }
    }
    let mut meat = Matrix::zeros(k, k);
    for s in scores.chunks_exact(k) {
        for a in 0..k {
            for b in 0..=a {
                meat[(a, b)] += s[a] * s[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            meat[(b, a)] = meat[(a, b)];
        }
    }
    let factor = if n > k {
        (g as f64 / (g - 1) as f64) * ((n - 1) as f64 / (n - k) as f64)
    } else {
        f64::NAN
    };
    let mut v = bread.matmul(&meat).matmul(bread).scale(factor);
    for a in 0..k {
        for b in 0..a {
            let s = 0.5 * (v[(a, b)] + v[(b, a)]);
            v[(a, b)] = s;
            v[(b, a)] = s;
        }
    }
    Ok((v, g))
}
