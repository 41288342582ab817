//! Truncated SVD via symmetric eigendecomposition of the smaller Gram
//! matrix, with a cyclic Jacobi eigensolver. Self-contained and adequate
//! at the scales this pipeline sees (M <= 768).

use crate::error::{CovError, Result};

/// Singular values below `RANK_FLOOR * sigma_max` count as zero.
pub const RANK_FLOOR: f64 = 1e-10;

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Rank-r factors of a d x M matrix given by its M columns.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
    /// Left singular vectors, columns of U_r (each of length d).
    pub u: Vec<Vec<f64>>,
    /// Right singular vectors, columns of V_r (each of length M).
    pub v: Vec<Vec<f64>>,
    pub rank: usize,
}

impl TruncatedSvd {
    /// Subspace energies c_i = ||(V_r Sigma_r)_{i,:}||^2 for i in 0..M.
    pub fn energies(&self) -> Vec<f64> {
        let m = self.v.first().map_or(0, |col| col.len());
        let mut c = vec![0.0; m];
        for (j, vj) in self.v.iter().enumerate() {
            let s2 = self.singular_values[j] * self.singular_values[j];
            for (i, &vij) in vj.iter().enumerate() {
                c[i] += s2 * vij * vij;
            }
        }
        c
    }

    /// Frobenius-squared reconstruction error ||Z - U_r S_r V_r^T||_F^2.
    #[allow(clippy::needless_range_loop)]
    pub fn reconstruction_error(&self, columns: &[Vec<f64>]) -> f64 {
        let d = columns.first().map_or(0, |c| c.len());
        let mut err = 0.0;
        for (i, col) in columns.iter().enumerate() {
            for row in 0..d {
                let mut approx = 0.0;
                for j in 0..self.rank {
                    approx += self.u[j][row] * self.singular_values[j] * self.v[j][i];
                }
                err += (col[row] - approx).powi(2);
            }
        }
        err
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as columns), unsorted.
#[allow(clippy::needless_range_loop)] // textbook index form
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut vecs = vec![vec![0.0; n]; n];
    for (i, row) in vecs.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let fro: f64 = a
        .iter()
        .flat_map(|r| r.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    let tol = JACOBI_TOL * fro.max(1.0);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[p][q].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() <= tol * 1e-2 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in vecs.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let vals = (0..n).map(|i| a[i][i]).collect();
    // Transpose rows-of-components into column vectors.
    let cols = (0..n)
        .map(|j| (0..n).map(|i| vecs[i][j]).collect())
        .collect();
    (vals, cols)
}

fn mat_vec_cols(columns: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    // Z * x where Z's columns are `columns` (x has length M, result d).
    let d = columns[0].len();
    let mut out = vec![0.0; d];
    for (j, col) in columns.iter().enumerate() {
        for (i, &cij) in col.iter().enumerate() {
            out[i] += cij * x[j];
        }
    }
    out
}

fn mat_t_vec_cols(columns: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    // Z^T * y (y has length d, result M).
    columns
        .iter()
        .map(|col| col.iter().zip(y).map(|(a, b)| a * b).sum())
        .collect()
}

/// Rank-r truncated SVD of the d x M matrix whose columns are given.
///
/// Eigendecomposes the M x M Gram matrix Z^T Z when M <= d, otherwise the
/// d x d matrix Z Z^T, and recovers the missing factor by projection.
pub fn truncated_svd(columns: &[Vec<f64>], rank: usize) -> Result<TruncatedSvd> {
    let m = columns.len();
    let d = columns.first().map_or(0, |c| c.len());
    if rank == 0 || rank >= m.min(d) {
        return Err(CovError::InvalidRank { rank, m, d });
    }

    let gram_side = m.min(d);
    let gram: Vec<Vec<f64>> = if m <= d {
        (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| columns[i].iter().zip(&columns[j]).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect()
    } else {
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| columns.iter().map(|col| col[i] * col[j]).sum())
                    .collect()
            })
            .collect()
    };

    let (vals, vecs) = jacobi_eigen(gram);
    let mut order: Vec<usize> = (0..gram_side).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());

    let singular_values: Vec<f64> = order
        .iter()
        .map(|&j| vals[j].max(0.0).sqrt())
        .collect();
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);

    let mut u = Vec::with_capacity(rank);
    let mut v = Vec::with_capacity(rank);
    for &j in order.iter().take(rank) {
        let sigma = vals[j].max(0.0).sqrt();
        if sigma <= RANK_FLOOR * sigma_max || sigma == 0.0 {
            // Numerically zero direction: contributes nothing.
            u.push(vec![0.0; d]);
            v.push(vec![0.0; m]);
            continue;
        }
        if m <= d {
            let vj = vecs[j].clone();
            let uj: Vec<f64> = mat_vec_cols(columns, &vj)
                .into_iter()
                .map(|x| x / sigma)
                .collect();
            u.push(uj);
            v.push(vj);
        } else {
            let uj = vecs[j].clone();
            let vj: Vec<f64> = mat_t_vec_cols(columns, &uj)
                .into_iter()
                .map(|x| x / sigma)
                .collect();
            u.push(uj);
            v.push(vj);
        }
    }

    Ok(TruncatedSvd {
        singular_values,
        u,
        v,
        rank,
    })
}
