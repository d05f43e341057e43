//! Compressed sparse row matrices and preconditioned Krylov solvers.
//!
//! Reductions run sequentially in index order, so solves are reproducible
//! bit for bit.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

/// Row-by-row builder; duplicate column entries within a row are summed.
#[derive(Debug, Default)]
pub struct CsrBuilder {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    row: Vec<(usize, f64)>,
}

impl CsrBuilder {
    pub fn new() -> Self {
        CsrBuilder {
            row_ptr: vec![0],
            ..Default::default()
        }
    }

    pub fn add(&mut self, col: usize, val: f64) {
        self.row.push((col, val));
    }

    pub fn finish_row(&mut self) {
        self.row.sort_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        for &(c, v) in &self.row {
            if last == Some(c) {
                *self.vals.last_mut().unwrap() += v;
            } else {
                self.cols.push(c);
                self.vals.push(v);
                last = Some(c);
            }
        }
        self.row.clear();
        self.row_ptr.push(self.cols.len());
    }

    pub fn build(self) -> Csr {
        Csr {
            nrows: self.row_ptr.len() - 1,
            row_ptr: self.row_ptr,
            cols: self.cols,
            vals: self.vals,
        }
    }
}

impl Csr {
    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[e] * x[self.cols[e]];
            }
            y[r] = acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .find(|&e| self.cols[e] == r)
                    .map_or(0.0, |e| self.vals[e])
            })
            .collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        (self.row_ptr[r]..self.row_ptr[r + 1])
            .find(|&e| self.cols[e] == c)
            .map_or(0.0, |e| self.vals[e])
    }

    /// Largest `|A_rc − A_cr|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                worst = worst.max((self.vals[e] - self.get(self.cols[e], r)).abs());
            }
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Stopping rule for a Krylov solve.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub relative: f64,
    pub max_iter: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            relative: 1e-10,
            max_iter: 20_000,
        }
    }
}

fn inverse_diagonal(a: &Csr) -> Result<Vec<f64>> {
    a.diagonal()
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if d == 0.0 {
                Err(Error::Solver(format!("zero diagonal in row {i}")))
            } else {
                Ok(1.0 / d)
            }
        })
        .collect()
}

/// Preconditioned conjugate gradients for symmetric positive definite `a`.
pub fn cg(a: &Csr, b: &[f64], x: &mut [f64], tol: Tolerance) -> Result<SolveStats> {
    let dinv = inverse_diagonal(a)?;
    let bn = norm(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r: Vec<f64> = a.apply(x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; b.len()];
    for it in 0..tol.max_iter {
        let rel = norm(&r) / bn;
        if rel <= tol.relative {
            return Ok(SolveStats {
                iterations: it,
                relative_residual: rel,
            });
        }
        a.mul(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Solver(format!(
                "matrix not positive definite (pᵀAp = {pap:e})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..z.len() {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver(format!(
        "CG: {} iterations, residual {:e}",
        tol.max_iter,
        norm(&r) / bn
    )))
}

/// Approximate inverse applied inside the Krylov loop.
#[derive(Debug, Clone)]
pub enum Preconditioner {
    Jacobi(Vec<f64>),
    /// Exact tridiagonal solves along index lines `q, q + stride, q + 2·stride, …`.
    Lines {
        stride: usize,
        lower: Vec<f64>,
        diag: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl Preconditioner {
    pub fn jacobi(a: &Csr) -> Result<Self> {
        Ok(Preconditioner::Jacobi(inverse_diagonal(a)?))
    }

    pub fn lines(a: &Csr, stride: usize) -> Result<Self> {
        let n = a.nrows;
        let diag = a.diagonal();
        if let Some(i) = diag.iter().position(|&d| d == 0.0) {
            return Err(Error::Solver(format!("zero diagonal in row {i}")));
        }
        let lower = (0..n)
            .map(|i| {
                if i >= stride {
                    a.get(i, i - stride)
                } else {
                    0.0
                }
            })
            .collect();
        let upper = (0..n)
            .map(|i| {
                if i + stride < n {
                    a.get(i, i + stride)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Preconditioner::Lines {
            stride,
            lower,
            diag,
            upper,
        })
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Preconditioner::Jacobi(dinv) => {
                for i in 0..r.len() {
                    z[i] = r[i] * dinv[i];
                }
            }
            Preconditioner::Lines {
                stride,
                lower,
                diag,
                upper,
            } => {
                let n = r.len();
                let mut c = vec![0.0; n.div_ceil(*stride)];
                for q in 0..*stride {
                    // Thomas algorithm; c holds the modified upper diagonal.
                    let mut prev: Option<usize> = None;
                    let mut k = 0;
                    let mut i = q;
                    while i < n {
                        let (m, rhs) = match prev {
                            Some(j) => (diag[i] - lower[i] * c[k - 1], r[i] - lower[i] * z[j]),
                            None => (diag[i], r[i]),
                        };
                        c[k] = upper[i] / m;
                        z[i] = rhs / m;
                        prev = Some(i);
                        k += 1;
                        i += stride;
                    }
                    while k > 1 {
                        k -= 1;
                        let i = q + (k - 1) * stride;
                        z[i] -= c[k - 1] * z[i + stride];
                    }
                }
            }
        }
    }
}

/// Right-preconditioned BiCGSTAB for general nonsingular `a`, Jacobi preconditioner.
pub fn bicgstab(a: &Csr, b: &[f64], x: &mut [f64], tol: Tolerance) -> Result<SolveStats> {
    bicgstab_with(a, b, x, tol, &Preconditioner::jacobi(a)?)
}

pub fn bicgstab_with(
    a: &Csr,
    b: &[f64],
    x: &mut [f64],
    tol: Tolerance,
    pre: &Preconditioner,
) -> Result<SolveStats> {
    let nrm_b = norm(b);
    if nrm_b == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let n = b.len();
    let mut r: Vec<f64> = a.apply(x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zs = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 0..tol.max_iter {
        let rel = norm(&r) / nrm_b;
        if rel <= tol.relative {
            return Ok(SolveStats {
                iterations: it,
                relative_residual: rel,
            });
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(Error::Solver(format!(
                "BiCGSTAB breakdown at iteration {it}"
            )));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        pre.apply(&p, &mut y);
        a.mul(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / nrm_b <= tol.relative {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(SolveStats {
                iterations: it + 1,
                relative_residual: norm(&s) / nrm_b,
            });
        }
        pre.apply(&s, &mut zs);
        a.mul(&zs, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zs[i];
            r[i] = s[i] - omega * t[i];
        }
    }
    Err(Error::Solver(format!(
        "BiCGSTAB: {} iterations, residual {:e}",
        tol.max_iter,
        norm(&r) / nrm_b
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize, shift: f64) -> Csr {
        let mut b = CsrBuilder::new();
        for i in 0..n {
            if i > 0 {
                b.add(i - 1, -1.0);
            }
            b.add(i, 2.0 + shift);
            if i + 1 < n {
                b.add(i + 1, -1.0);
            }
            b.finish_row();
        }
        b.build()
    }

    #[test]
    fn builder_sums_duplicates() {
        let mut b = CsrBuilder::new();
        b.add(1, 1.0);
        b.add(0, 2.0);
        b.add(1, 0.5);
        b.finish_row();
        let a = b.build();
        assert_eq!(a.cols, vec![0, 1]);
        assert_eq!(a.vals, vec![2.0, 1.5]);
    }

    #[test]
    fn cg_and_bicgstab_agree() {
        let a = laplacian_1d(200, 0.01);
        let b: Vec<f64> = (0..200).map(|i| ((i as f64) * 0.1).sin()).collect();
        let mut x1 = vec![0.0; 200];
        let mut x2 = vec![0.0; 200];
        cg(&a, &b, &mut x1, Tolerance::default()).unwrap();
        bicgstab(&a, &b, &mut x2, Tolerance::default()).unwrap();
        let r = a.apply(&x1);
        let res: f64 = r
            .iter()
            .zip(&b)
            .map(|(u, v)| (u - v).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(res <= 1e-10 * norm(&b) * 1.0001);
        let diff = x1
            .iter()
            .zip(&x2)
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f64::max);
        let scale = x1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-7 * scale);
    }

    #[test]
    fn nonsymmetric_solve() {
        let mut b = CsrBuilder::new();
        let n = 100;
        for i in 0..n {
            if i > 0 {
                b.add(i - 1, -1.3);
            }
            b.add(i, 3.0);
            if i + 1 < n {
                b.add(i + 1, -0.7);
            }
            b.finish_row();
        }
        let a = b.build();
        let rhs = vec![1.0; n];
        let mut x = vec![0.0; n];
        let stats = bicgstab(&a, &rhs, &mut x, Tolerance::default()).unwrap();
        assert!(stats.relative_residual <= 1e-10);
    }

    #[test]
    fn line_preconditioner_is_exact_on_lines() {
        let a = laplacian_1d(50, 0.3);
        let pre = Preconditioner::lines(&a, 1).unwrap();
        let b: Vec<f64> = (0..50).map(|i| (i as f64).cos()).collect();
        let mut z = vec![0.0; 50];
        pre.apply(&b, &mut z);
        let r = a.apply(&z);
        assert!(r.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-12));
        let mut x = vec![0.0; 50];
        let stats = bicgstab_with(&a, &b, &mut x, Tolerance::default(), &pre).unwrap();
        assert!(stats.iterations <= 1);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = laplacian_1d(10, 0.0);
        let mut x = vec![1.0; 10];
        cg(&a, &[0.0; 10], &mut x, Tolerance::default()).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
