//! Minimal sparse CSR matrix and a Jacobi-preconditioned conjugate
//! gradient solver, shared by the Darcy assembly and the finite-volume
//! flux post-processing.

use crate::error::{Error, Result};

/// Compressed sparse row matrix (square, f64).
#[derive(Debug, Clone)]
pub(crate) struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Csr {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                last = Some((r, c));
            }
            row_ptr[r + 1] = cols.len();
        }
        // Rows without entries inherit the previous offset.
        for r in 1..=n {
            if row_ptr[r] < row_ptr[r - 1] {
                row_ptr[r] = row_ptr[r - 1];
            }
        }
        Csr { n, row_ptr, cols, vals }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[r] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.cols[k] == r {
                    d[r] += self.vals[k];
                }
            }
        }
        d
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }
}

/// Output of a converged CG solve.
pub(crate) struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradient for symmetric positive
/// (semi-)definite systems. Zero diagonal entries fall back to an identity
/// preconditioner row so untouched unknowns simply stay at zero.
pub(crate) fn pcg(a: &Csr, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<CgResult> {
    let n = a.n;
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(CgResult { x: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(&ri, &di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut res_norm = norm(&r);
    for it in 0..max_iter {
        if res_norm <= rel_tol * b_norm {
            return Ok(CgResult { x, iterations: it, relative_residual: res_norm / b_norm });
        }
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::Solver(format!(
                "conjugate gradient broke down at iteration {it}: p^T A p = {pap:.3e} \
                 (system not positive definite)"
            )));
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
        res_norm = norm(&r);
    }
    if res_norm <= rel_tol * b_norm {
        Ok(CgResult { x, iterations: max_iter, relative_residual: res_norm / b_norm })
    } else {
        Err(Error::Solver(format!(
            "conjugate gradient did not converge in {max_iter} iterations \
             (relative residual {:.3e}, target {rel_tol:.1e})",
            res_norm / b_norm
        )))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_from_triplets_sums_duplicates() {
        let a = Csr::from_triplets(3, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 1, 4.0), (2, 2, 5.0), (0, 2, -1.0)]);
        let mut y = vec![0.0; 3];
        a.matvec(&[1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, vec![2.0, 4.0, 5.0]);
        assert_eq!(a.diagonal(), vec![3.0, 4.0, 5.0]);
    }

    #[test]
    fn pcg_solves_spd_system() {
        // Simple 1D Laplacian with Dirichlet-like diagonal boost.
        let n = 50;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.1));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        let a = Csr::from_triplets(n, t);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; n];
        a.matvec(&x_true, &mut b);
        let out = pcg(&a, &b, 1e-12, 10 * n).unwrap();
        for (xi, ti) in out.x.iter().zip(&x_true) {
            assert!((xi - ti).abs() < 1e-9);
        }
    }

    #[test]
    fn pcg_zero_rhs_short_circuits() {
        let a = Csr::from_triplets(2, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        let out = pcg(&a, &[0.0, 0.0], 1e-10, 10).unwrap();
        assert_eq!(out.x, vec![0.0, 0.0]);
        assert_eq!(out.iterations, 0);
    }
}
