//! Non-divergence second-order operators `g^{ij}(∂_i∂_j u − Γ^k_{ij}∂_k u) + c u`
//! on a half-space grid, assembled with the same weighted stencils as
//! [`crate::fd`] so that interior rows reproduce `tr Hess u + c u` exactly.
//!
//! Row kinds: Dirichlet rows on `w = w0` and on Dirichlet faces; elsewhere the
//! equation itself, with ghost values eliminated on Neumann faces (mirror) and
//! on the top face (`e^{−kw}u` has log-derivative `β` there).

use crate::error::{Error, Result};
use crate::field::{ScalarField, TensorField};
use crate::grid::HalfSpaceGrid;
use crate::sparse::{bicgstab_with, Csr, CsrBuilder, Preconditioner, SolveStats, Tolerance};

/// Condition on one column of the top face `w = w_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Top {
    Dirichlet,
    /// `∂_w(e^{−kw}u) = β e^{−kw}u`.
    LogDerivative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lateral {
    Dirichlet,
    Neumann,
}

pub struct Operator<'a> {
    pub ginv: &'a TensorField,
    pub gamma: &'a TensorField,
    /// Radial weight of the unknown.
    pub weight: f64,
    /// Zeroth-order coefficient `c`.
    pub shift: f64,
    /// One entry per column (point of a `w`-slice).
    pub top: Vec<Top>,
    pub lateral: Lateral,
}

type Stencil = Vec<(usize, f64)>;

impl Operator<'_> {
    fn grid(&self) -> &HalfSpaceGrid {
        &self.ginv.grid
    }

    fn is_dirichlet(&self, idx: &[usize; 4], p: usize) -> bool {
        let g = self.grid();
        if idx[0] == 0 {
            return true;
        }
        if idx[0] == g.nw - 1 && self.top[p % g.slice_len()] == Top::Dirichlet {
            return true;
        }
        self.lateral == Lateral::Dirichlet && (1..=g.n).any(|a| idx[a] == 0 || idx[a] == g.nx - 1)
    }

    fn beta(&self, p: usize) -> f64 {
        match self.top[p % self.grid().slice_len()] {
            Top::LogDerivative(b) => b,
            Top::Dirichlet => unreachable!("Dirichlet rows carry no stencil"),
        }
    }

    fn d1(&self, axis: usize, p: usize, idx: &[usize; 4]) -> Stencil {
        let g = self.grid();
        let h = g.spacing(axis);
        let s = g.stride(axis);
        if axis == 0 {
            let k = self.weight;
            if idx[0] == g.nw - 1 {
                vec![(p, k + self.beta(p))]
            } else {
                vec![
                    (p, k),
                    (p + s, (-k * h).exp() / (2.0 * h)),
                    (p - s, -(k * h).exp() / (2.0 * h)),
                ]
            }
        } else if idx[axis] == 0 || idx[axis] == g.nx - 1 {
            Vec::new()
        } else {
            vec![(p + s, 1.0 / (2.0 * h)), (p - s, -1.0 / (2.0 * h))]
        }
    }

    fn d2(&self, axis: usize, p: usize, idx: &[usize; 4]) -> Stencil {
        let g = self.grid();
        let h = g.spacing(axis);
        let s = g.stride(axis);
        let h2 = h * h;
        if axis == 0 {
            let k = self.weight;
            let e = (k * h).exp();
            if idx[0] == g.nw - 1 {
                let b = self.beta(p);
                vec![
                    (p, k * k + 2.0 * k * b + (2.0 * h * b - 2.0) / h2),
                    (p - s, 2.0 * e / h2),
                ]
            } else {
                vec![
                    (p, k * k - 2.0 / h2),
                    (p + s, (k / h + 1.0 / h2) / e),
                    (p - s, e * (1.0 / h2 - k / h)),
                ]
            }
        } else if idx[axis] == 0 {
            vec![(p, -2.0 / h2), (p + s, 2.0 / h2)]
        } else if idx[axis] == g.nx - 1 {
            vec![(p, -2.0 / h2), (p - s, 2.0 / h2)]
        } else {
            vec![(p, -2.0 / h2), (p + s, 1.0 / h2), (p - s, 1.0 / h2)]
        }
    }

    fn mixed(&self, a: usize, b: usize, p: usize, idx: &[usize; 4]) -> Stencil {
        let g = self.grid();
        let mut out = Vec::new();
        for (q, c) in self.d1(a, p, idx) {
            let qi = g.unflatten(q);
            for (r, c2) in self.d1(b, q, &qi) {
                out.push((r, c * c2));
            }
        }
        out
    }

    pub fn assemble(&self) -> Result<Csr> {
        let g = *self.grid();
        if self.gamma.grid != g || self.top.len() != g.slice_len() {
            return Err(Error::Data("operator data does not match the grid".into()));
        }
        let d = g.dim();
        let mut bld = CsrBuilder::new();
        for p in 0..g.len() {
            let idx = g.unflatten(p);
            if self.is_dirichlet(&idx, p) {
                bld.add(p, 1.0);
                bld.finish_row();
                continue;
            }
            for i in 0..d {
                for j in i..d {
                    let gij = self.ginv.comps[i * d + j][p];
                    if gij == 0.0 {
                        continue;
                    }
                    let (st, f) = if i == j {
                        (self.d2(i, p, &idx), gij)
                    } else {
                        (self.mixed(i, j, p, &idx), 2.0 * gij)
                    };
                    for (q, c) in st {
                        bld.add(q, f * c);
                    }
                }
            }
            for k in 0..d {
                let mut bk = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        bk += self.ginv.comps[i * d + j][p]
                            * self.gamma.comps[(k * d + i) * d + j][p];
                    }
                }
                if bk != 0.0 {
                    for (q, c) in self.d1(k, p, &idx) {
                        bld.add(q, -bk * c);
                    }
                }
            }
            bld.add(p, self.shift);
            bld.finish_row();
        }
        Ok(bld.build())
    }

    /// Zero the right-hand side on Dirichlet rows.
    pub fn mask_rhs(&self, rhs: &mut [f64]) {
        let g = *self.grid();
        for (p, v) in rhs.iter_mut().enumerate() {
            if self.is_dirichlet(&g.unflatten(p), p) {
                *v = 0.0;
            }
        }
    }
}

/// Solve `L u = f` with homogeneous boundary data starting from `guess`.
/// Preconditioned by exact solves along `w`-columns, which carry the slowly
/// decaying modes of the top face.
pub fn solve(
    op: &Operator,
    source: &[f64],
    guess: Option<&[f64]>,
    tol: Tolerance,
) -> Result<(ScalarField, SolveStats, f64)> {
    let a = op.assemble()?;
    let mut rhs = source.to_vec();
    op.mask_rhs(&mut rhs);
    let mut x = guess
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; rhs.len()]);
    let stats = bicgstab_with(
        &a,
        &rhs,
        &mut x,
        tol,
        &Preconditioner::lines(&a, op.grid().slice_len())?,
    )?;
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((ScalarField::new(*op.grid(), x, op.weight)?, stats, rhs_norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric_zoo::{make_perturbed, ModelSpec};
    use crate::tensor_core::{christoffel_zero_shift, hessian_with, trace};

    #[test]
    fn interior_rows_match_hessian_trace() {
        let grid = HalfSpaceGrid::build(2, 0.0, 2.0, 21, 1.0, 11).unwrap();
        let metric = make_perturbed(&grid, &ModelSpec::perturbed(2, 0.5, 0.2, 0.1)).unwrap();
        let ginv = metric.inverse();
        let gamma = christoffel_zero_shift(&metric);
        let u = ScalarField::from_fn(grid, 1.0, |c| {
            c[0].exp() * (1.0 + 0.3 * c[1] * c[2] + 0.2 * (c[0] + c[1]).sin())
        });
        let op = Operator {
            ginv: &ginv,
            gamma: &gamma,
            weight: 1.0,
            shift: -3.0,
            top: vec![Top::LogDerivative(0.2); grid.slice_len()],
            lateral: Lateral::Neumann,
        };
        let lu = op.assemble().unwrap().apply(&u.values);
        let oracle = trace(&ginv, &hessian_with(&gamma, &u));
        let mut worst: f64 = 0.0;
        for p in 0..grid.len() {
            let idx = grid.unflatten(p);
            if idx[0] == 0
                || idx[0] == grid.nw - 1
                || (1..=2).any(|a| idx[a] == 0 || idx[a] == grid.nx - 1)
            {
                continue;
            }
            let want = oracle.values[p] - 3.0 * u.values[p];
            worst = worst.max((lu[p] - want).abs() / (1.0 + want.abs()));
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn manufactured_dirichlet_solution_converges() {
        // Flat Laplacian on the hyperbolic metric, u* vanishing on every face.
        let err = |nw: usize, nx: usize| {
            let grid = HalfSpaceGrid::build(1, 0.0, 1.0, nw, 1.0, nx).unwrap();
            let metric = crate::metric_zoo::make_hyperbolic(&grid);
            let ginv = metric.inverse();
            let gamma = christoffel_zero_shift(&metric);
            let exact = ScalarField::from_fn(grid, 0.0, |c| {
                (std::f64::consts::PI * c[0]).sin() * (1.0 - c[1] * c[1])
            });
            // Analytic Δu for u = sin(πw)(1 − x²) on dw² + e^{2w}dx²:
            // u_ww + u_w − e^{−2w}·2 sin(πw).
            let src: Vec<f64> = (0..grid.len())
                .map(|p| {
                    let c = grid.point(p);
                    let pi = std::f64::consts::PI;
                    let s = (1.0 - c[1] * c[1])
                        * (-pi * pi * (pi * c[0]).sin() + pi * (pi * c[0]).cos());
                    s - (-2.0 * c[0]).exp() * 2.0 * (pi * c[0]).sin()
                })
                .collect();
            let op = Operator {
                ginv: &ginv,
                gamma: &gamma,
                weight: 0.0,
                shift: 0.0,
                top: vec![Top::Dirichlet; grid.slice_len()],
                lateral: Lateral::Dirichlet,
            };
            let (u, _, _) = solve(&op, &src, None, Tolerance::default()).unwrap();
            u.values
                .iter()
                .zip(&exact.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(17, 17), err(33, 33));
        let order = (e1 / e2).log2();
        assert!((1.8..2.3).contains(&order), "{e1} {e2} {order}");
    }

    #[test]
    fn top_log_derivative_is_imposed() {
        // On dw² + e^{2w}dx², Δu − 2u = 1 with u(0) = 0 and u′ = 0 on top has
        // u = −1/2 + A e^w + B e^{−2w}, A = 2B e^{−3W}, A + B = 1/2.
        let grid = HalfSpaceGrid::build(1, 0.0, 3.0, 601, 1.0, 9).unwrap();
        let metric = crate::metric_zoo::make_hyperbolic(&grid);
        let ginv = metric.inverse();
        let gamma = christoffel_zero_shift(&metric);
        let op = Operator {
            ginv: &ginv,
            gamma: &gamma,
            weight: 1.0,
            shift: -2.0,
            top: vec![Top::LogDerivative(-1.0); grid.slice_len()],
            lateral: Lateral::Neumann,
        };
        let (u, _, _) = solve(&op, &vec![1.0; grid.len()], None, Tolerance::default()).unwrap();
        let big_w: f64 = 3.0;
        let b = 0.5 / (1.0 + 2.0 * (-3.0 * big_w).exp());
        let a = 0.5 - b;
        for iw in (0..grid.nw).step_by(50) {
            let w = grid.w(iw);
            let exact = -0.5 + a * w.exp() + b * (-2.0 * w).exp();
            let got = u.values[iw * grid.slice_len() + 4];
            assert!((got - exact).abs() < 1e-4, "w = {w}: {got} vs {exact}");
        }
    }
}
