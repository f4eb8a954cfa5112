//! Sparse symmetric storage and the SPD solvers behind the elliptic module.
//!
//! Small and medium systems use a banded Cholesky factorization; the
//! 13-point bilaplacian has bandwidth `2 * interior_row_length`, so the
//! factor costs `O(n * bw^2)` once and each solve `O(n * bw)`. Very large
//! systems fall back to Jacobi-preconditioned conjugate gradients.

use crate::error::{Error, Result};

/// Interior dimension above which the direct factorization is abandoned.
pub const DIRECT_SOLVE_LIMIT: usize = 100_000;

/// Row-compressed sparse matrix with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists; duplicates are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n).flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j))).max().unwrap_or(0)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            y[i] = self.row(i).map(|(j, a)| a * x[j]).sum();
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `self + diag(d)`.
    pub fn plus_diagonal(&self, d: &[f64]) -> CsrMatrix {
        let mut m = self.clone();
        for i in 0..self.n {
            let r = m.row_ptr[i]..m.row_ptr[i + 1];
            match m.cols[r.clone()].binary_search(&i) {
                Ok(k) => m.vals[r.start + k] += d[i],
                Err(_) => panic!("diagonal entry missing in row {i}"),
            }
        }
        m
    }

    pub fn max_asymmetry(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, a)| (i, j, a)))
            .map(|(i, j, a)| (a - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }
}

/// Lower-banded Cholesky factor `A = L L^T`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // row i holds L[i][i-bw ..= i]
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    l[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                // s = A[i][j] - sum_k L[i][k] L[j][k]
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = l[i * w + (j + bw - i)];
                for k in k0..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::SolverBreakdown {
                            reason: format!("matrix not positive definite at row {i} (pivot {s:e})"),
                            residual: f64::NAN,
                        });
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (k + bw - i)] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                s -= self.l[k * w + (i + bw - k)] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
    }
}

/// Result of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for an SPD matrix.
pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<CgOutcome> {
    let n = a.dim();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(CgOutcome { x: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolverBreakdown {
                reason: "non-positive curvature in conjugate gradients".into(),
                residual: norm(&r) / bnorm,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = norm(&r) / bnorm;
        if res <= tol {
            return Ok(CgOutcome { x, iterations: it + 1, relative_residual: res });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverBreakdown {
        reason: format!("conjugate gradients did not converge in {max_iter} iterations"),
        residual: norm(&r) / bnorm,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize, shift: f64) -> CsrMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 2.0 + shift)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.0));
                }
                r
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_rows(vec![vec![(0, 1.0), (0, 2.0), (1, 1.0)], vec![(1, 4.0)]]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.bandwidth(), 1);
    }

    #[test]
    fn banded_cholesky_solves_tridiagonal() {
        let a = laplacian_1d(50, 0.1);
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = a.mul(&x_true);
        BandedCholesky::factor(&a).unwrap().solve_in_place(&mut b);
        let err = b.iter().zip(&x_true).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = laplacian_1d(10, -3.0);
        assert!(matches!(BandedCholesky::factor(&a), Err(Error::SolverBreakdown { .. })));
    }

    #[test]
    fn cg_matches_direct() {
        let a = laplacian_1d(40, 0.5);
        let b: Vec<f64> = (0..40).map(|i| 1.0 + i as f64).collect();
        let cg = conjugate_gradient(&a, &b, 1e-13, 1000).unwrap();
        let mut direct = b.clone();
        BandedCholesky::factor(&a).unwrap().solve_in_place(&mut direct);
        let err = cg.x.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);
        assert!(cg.relative_residual <= 1e-13);
    }

    #[test]
    fn cg_zero_rhs() {
        let a = laplacian_1d(5, 0.0);
        let out = conjugate_gradient(&a, &[0.0; 5], 1e-12, 10).unwrap();
        assert_eq!(out.x, vec![0.0; 5]);
    }
}
