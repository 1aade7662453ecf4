//! Compressed sparse row matrices and a Jacobi-preconditioned conjugate
//! gradient solver for the symmetric positive-definite grid systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix from `(row, col, value)` triplets, summing
    /// duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *o = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                (self.indptr[r]..self.indptr[r + 1])
                    .find(|&k| self.indices[k] == r)
                    .map_or(0.0, |k| self.values[k])
            })
            .collect()
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.indptr[r]..self.indptr[r + 1] {
                m[(r, self.indices[k])] += self.values[k];
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned CG. Stops when `|r| <= tol * |b|`.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.n();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut ax = vec![0.0; n];
    a.mul_vec(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    let mut it = 0;
    while rel > tol && it < max_iter {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Degenerate(
                "system matrix is not positive definite".into(),
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
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
        rel = dot(&r, &r).sqrt() / bnorm;
        it += 1;
    }
    if rel > tol {
        log::warn!(
            "conjugate gradient stopped at relative residual {rel:.3e} after {it} iterations"
        );
    }
    Ok((
        x,
        SolveStats {
            iterations: it,
            relative_residual: rel,
        },
    ))
}

/// Dense Cholesky solve; only sensible for small systems.
pub fn direct_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let chol = a
        .to_dense()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("system matrix is not positive definite".into()))?;
    Ok(chol
        .solve(&DVector::from_column_slice(b))
        .iter()
        .copied()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn pcg_matches_direct() {
        let a = laplacian_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let (x, stats) = pcg(&a, &b, None, 1e-12, 1000).unwrap();
        let xd = direct_solve(&a, &b).unwrap();
        assert!(stats.relative_residual <= 1e-12);
        for (u, v) in x.iter().zip(&xd) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 1, 1.0)]);
        assert_eq!(a.diagonal(), vec![3.0, 1.0]);
    }
}
