//! Compressed sparse row matrices and a Jacobi-preconditioned conjugate
//! gradient solver for the symmetric positive definite displacement systems.
//!
//! Assembly order is fixed (stable sort of triplets, duplicate entries summed
//! in push order) and the matrix-vector product writes each output row
//! independently, so results are bitwise reproducible at any thread count.

use crate::parallel;
use crate::Error;

#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an n-by-n matrix from (row, col, value) triplets; duplicates
    /// are summed in their original push order.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> CsrMatrix {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_counts = vec![0usize; n + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet index ({r}, {c}) out of range for n = {n}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_counts[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_counts[r + 1] += row_counts[r];
        }
        CsrMatrix { n, row_ptr: row_counts, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        parallel::par_fill(y, |i| {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            acc
        });
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.cols[k] == i {
                    d[i] += self.vals[k];
                }
            }
        }
        d
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[i][self.cols[k]] += self.vals[k];
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgParams {
    /// Relative tolerance on the residual max norm.
    pub rel_tol: f64,
    /// Iteration cap as a multiple of the dof count.
    pub cap_factor: usize,
}

impl Default for CgParams {
    fn default() -> Self {
        CgParams { rel_tol: 1e-12, cap_factor: 20 }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, &x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves A x = b for symmetric positive definite A by preconditioned
/// conjugate gradients with the Jacobi (diagonal) preconditioner.
///
/// Converged means `max|r| <= rel_tol * max|b|`. Returns the solution and the
/// iteration count; fails with the residual attached if the iteration cap
/// (`cap_factor * n`) is exhausted or the matrix reveals itself indefinite.
pub fn cg_solve(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    params: CgParams,
) -> Result<(Vec<f64>, usize), Error> {
    let n = a.n();
    assert_eq!(b.len(), n);
    let b_norm = inf_norm(b);
    if b_norm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let diag = a.diagonal();
    let mut inv_diag = vec![0.0; n];
    for i in 0..n {
        if !(diag[i] > 0.0) {
            return Err(Error::SolverFailure {
                residual: f64::INFINITY,
                iterations: 0,
                detail: format!("nonpositive diagonal entry {} at row {i}", diag[i]),
            });
        }
        inv_diag[i] = 1.0 / diag[i];
    }

    let mut x = match x0 {
        Some(v) => {
            assert_eq!(v.len(), n);
            v.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    a.matvec_into(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let cap = params.cap_factor.saturating_mul(n).max(1);
    let tol = params.rel_tol * b_norm;

    for it in 0..=cap {
        let res = inf_norm(&r);
        if res <= tol {
            return Ok((x, it));
        }
        if it == cap {
            break;
        }
        a.matvec_into(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) || !pq.is_finite() {
            return Err(Error::SolverFailure {
                residual: res,
                iterations: it,
                detail: format!("curvature p'Ap = {pq} is not positive"),
            });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
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
    Err(Error::SolverFailure {
        residual: inf_norm(&r),
        iterations: cap,
        detail: "iteration cap exhausted".to_string(),
    })
}
