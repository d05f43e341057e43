//! Codazzi-type systems `∇_iT_{jk} − ∇_jT_{ik} = f_{ijk}`: residuals, the
//! reduction to componentwise Poisson problems on a flat box, the flat solve
//! and the measured elliptic estimate ratio.

use crate::elliptic::{Lateral, Operator, Top};
use crate::error::{Error, Result};
use crate::field::{ScalarField, Slot, Symmetry, TensorField};
use crate::grid::HalfSpaceGrid;
use crate::sparse::{bicgstab_with, Preconditioner, SolveStats, Tolerance};

/// A symmetric `T` together with its Codazzi residual `f`.
#[derive(Debug, Clone)]
pub struct CodazziData {
    pub t: TensorField,
    pub f: TensorField,
    pub traceless: bool,
}

impl CodazziData {
    /// Check `f_{ijk} = −f_{jik}` exactly and, when `traceless` is set, the
    /// flat trace of `T` against `tol`.
    pub fn new(t: TensorField, f: TensorField, traceless: bool, tol: f64) -> Result<Self> {
        if t.rank() != 2 || f.rank() != 3 || t.grid != f.grid {
            return Err(Error::Data(
                "expected rank-2 T and rank-3 f on one grid".into(),
            ));
        }
        let d = t.dim();
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    if f.comp(&[i, j, k])
                        .iter()
                        .zip(f.comp(&[j, i, k]))
                        .any(|(a, b)| *a != -*b)
                    {
                        return Err(Error::Data(format!(
                            "f not antisymmetric in ({i}, {j}) for k = {k}"
                        )));
                    }
                }
            }
        }
        if traceless {
            let worst = (0..t.grid.len())
                .map(|p| (0..d).map(|i| t.at(p, &[i, i])).sum::<f64>().abs())
                .fold(0.0, f64::max);
            if worst > tol {
                return Err(Error::Data(format!("trace {worst:e} exceeds {tol:e}")));
            }
        }
        Ok(CodazziData { t, f, traceless })
    }
}

/// Identity metric on a box, with no radial weights.
pub fn flat_metric(grid: HalfSpaceGrid) -> TensorField {
    let d = grid.dim();
    let mut g = TensorField::covariant(grid, 2, 0.0);
    g.index_weight = 0.0;
    for i in 0..d {
        g.comps[i * d + i] = vec![1.0; grid.len()];
    }
    g.with_symmetry(Symmetry::Symmetric(0, 1))
}

/// `f_{ijk} = ∇_iT_{jk} − ∇_jT_{ik}`; the `Γ^l_{ij}` terms cancel, leaving
/// `∂_iT_{jk} − ∂_jT_{ik} − Γ^l_{ik}T_{jl} + Γ^l_{jk}T_{il}`. Pass `None` for
/// a flat background.
pub fn codazzi_residual(gamma: Option<&TensorField>, t: &TensorField) -> Result<TensorField> {
    if t.rank() != 2 {
        return Err(Error::Data("Codazzi residual needs a rank-2 field".into()));
    }
    let grid = t.grid;
    let d = t.dim();
    let dt: Vec<Vec<Vec<f64>>> = (0..d * d)
        .map(|c| (0..d).map(|a| t.d_comp(&t.multi(c), a)).collect())
        .collect();
    let mut f = TensorField::covariant(grid, 3, t.weight);
    f.index_weight = t.index_weight;
    for i in 0..d {
        for j in i + 1..d {
            for k in 0..d {
                let vals: Vec<f64> = (0..grid.len())
                    .map(|p| {
                        let mut v = dt[j * d + k][i][p] - dt[i * d + k][j][p];
                        if let Some(gamma) = gamma {
                            for l in 0..d {
                                v -= gamma.comps[(l * d + i) * d + k][p] * t.comps[j * d + l][p];
                                v += gamma.comps[(l * d + j) * d + k][p] * t.comps[i * d + l][p];
                            }
                        }
                        v
                    })
                    .collect();
                f.comps[(j * d + i) * d + k] = vals.iter().map(|v| -v).collect();
                f.comps[(i * d + j) * d + k] = vals;
            }
        }
    }
    f.symmetries.push(Symmetry::Antisymmetric(0, 1));
    Ok(f)
}

/// Source of the flat Poisson system satisfied by a traceless solution,
/// `S_{jk} = ∂_i f_{ijk} + ∂_j f_{iki}`, symmetrized in `(j, k)`.
pub fn poisson_reduce(f: &TensorField) -> Result<TensorField> {
    if f.rank() != 3 || f.index_weight != 0.0 {
        return Err(Error::Precondition(
            "Poisson reduction needs a rank-3 field on a flat background".into(),
        ));
    }
    let grid = f.grid;
    let d = f.dim();
    let contracted: Vec<ScalarField> = (0..d)
        .map(|k| {
            let mut v = vec![0.0; grid.len()];
            for i in 0..d {
                v.iter_mut()
                    .zip(f.comp(&[i, k, i]))
                    .for_each(|(a, b)| *a += b);
            }
            ScalarField {
                grid,
                values: v,
                weight: f.weight,
            }
        })
        .collect();
    let mut s = TensorField::covariant(grid, 2, f.weight);
    s.index_weight = 0.0;
    for j in 0..d {
        for k in 0..d {
            let mut v = contracted[k].d(j);
            for i in 0..d {
                v.iter_mut()
                    .zip(f.d_comp(&[i, j, k], i))
                    .for_each(|(a, b)| *a += b);
            }
            s.comps[j * d + k] = v;
        }
    }
    Ok(s.with_symmetry(Symmetry::Symmetric(0, 1)))
}

/// `T − (g^{kl}T_{kl}/(n+1)) g`.
pub fn traceless_part(t: &TensorField, g: &TensorField, ginv: &TensorField) -> TensorField {
    let d = t.dim();
    let mut out = t.clone();
    for p in 0..t.grid.len() {
        let tr: f64 = (0..d * d).map(|c| ginv.comps[c][p] * t.comps[c][p]).sum();
        let s = tr / d as f64;
        for c in 0..d * d {
            out.comps[c][p] = t.comps[c][p] - s * g.comps[c][p];
        }
    }
    out
}

/// Flat Laplacian of each component with the compact five-point stencils.
pub fn flat_laplacian(t: &TensorField) -> TensorField {
    let d = t.dim();
    let mut out = t.clone();
    for c in 0..t.comps.len() {
        let mut v = vec![0.0; t.grid.len()];
        for a in 0..d {
            let dd = crate::fd::d2(&t.grid, &t.comps[c], a, a, 0.0);
            v.iter_mut().zip(dd).for_each(|(x, y)| *x += y);
        }
        out.comps[c] = v;
    }
    out
}

#[derive(Debug, Clone)]
pub struct CodazziSolution {
    pub t: TensorField,
    pub stats: Vec<SolveStats>,
}

/// Recover `T` from its Codazzi residual on a flat box by solving
/// `ΔT_{jk} = S_{jk}` with the boundary values of `boundary` on every face.
pub fn solve_codazzi_flat(
    f: &TensorField,
    boundary: &TensorField,
    tol: Tolerance,
) -> Result<CodazziSolution> {
    let grid = f.grid;
    if boundary.grid != grid || boundary.rank() != 2 {
        return Err(Error::Data(
            "boundary data must be rank 2 on the grid of f".into(),
        ));
    }
    let d = grid.dim();
    let source = poisson_reduce(f)?;
    let ginv = flat_metric(grid);
    let gamma = TensorField::zeros(grid, vec![Slot::Upper, Slot::Lower, Slot::Lower], 0.0);
    let op = Operator {
        ginv: &ginv,
        gamma: &gamma,
        weight: 0.0,
        shift: 0.0,
        top: vec![Top::Dirichlet; grid.slice_len()],
        lateral: Lateral::Dirichlet,
    };
    let a = op.assemble()?;
    let pre = Preconditioner::lines(&a, grid.slice_len())?;
    let mut interior = vec![1.0; grid.len()];
    op.mask_rhs(&mut interior);
    let mut t = TensorField::covariant(grid, 2, 0.0);
    t.index_weight = 0.0;
    let mut stats = Vec::new();
    for j in 0..d {
        for k in j..d {
            let c = j * d + k;
            let rhs: Vec<f64> = (0..grid.len())
                .map(|p| {
                    if interior[p] == 0.0 {
                        boundary.comps[c][p]
                    } else {
                        source.comps[c][p]
                    }
                })
                .collect();
            let mut x = boundary.comps[c].clone();
            stats.push(bicgstab_with(&a, &rhs, &mut x, tol, &pre)?);
            t.comps[k * d + j] = x.clone();
            t.comps[c] = x;
        }
    }
    t.symmetries.push(Symmetry::Symmetric(0, 1));
    Ok(CodazziSolution { t, stats })
}

/// Points at least `margin` (a fraction of each extent) away from every face.
pub fn inner_points(grid: &HalfSpaceGrid, margin: f64) -> Vec<usize> {
    let lo = [grid.w0, -grid.half_width];
    let len = [grid.w_max - grid.w0, 2.0 * grid.half_width];
    (0..grid.len())
        .filter(|&p| {
            let c = grid.point(p);
            (0..=grid.n).all(|a| {
                let k = a.min(1);
                let s = (c[a] - lo[k]) / len[k];
                s >= margin - 1e-12 && s <= 1.0 - margin + 1e-12
            })
        })
        .collect()
}

fn cell_volume(grid: &HalfSpaceGrid) -> f64 {
    (0..=grid.n).map(|a| grid.spacing(a)).product()
}

/// `(∫ Σ_c |comp_c|^q)^{1/q}` over `points`.
pub fn lq_norm(comps: &[Vec<f64>], grid: &HalfSpaceGrid, points: &[usize], q: f64) -> f64 {
    let vol = cell_volume(grid);
    let sum: f64 = points
        .iter()
        .map(|&p| comps.iter().map(|c| c[p] * c[p]).sum::<f64>().powf(q / 2.0))
        .sum();
    (sum * vol).powf(1.0 / q)
}

/// `‖T‖_{W^{1,q}(Ω′)} / (‖f‖_{L^q(Ω)} + ‖T‖_{L^q(Ω)})` with `Ω′` the points at
/// relative distance `margin` from the faces.
pub fn estimate_ratio(t: &TensorField, f: &TensorField, q: f64, margin: f64) -> f64 {
    let grid = t.grid;
    let all: Vec<usize> = (0..grid.len()).collect();
    let inner = inner_points(&grid, margin);
    let mut w1 = t.comps.clone();
    for c in 0..t.comps.len() {
        for a in 0..t.dim() {
            w1.push(t.d_comp(&t.multi(c), a));
        }
    }
    lq_norm(&w1, &grid, &inner, q)
        / (lq_norm(&f.comps, &grid, &all, q) + lq_norm(&t.comps, &grid, &all, q))
}

/// `‖A − B‖_{L²}` over `points`, componentwise.
pub fn l2_difference(a: &TensorField, b: &TensorField, points: &[usize]) -> f64 {
    let diff: Vec<Vec<f64>> = a
        .comps
        .iter()
        .zip(&b.comps)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect())
        .collect();
    lq_norm(&diff, &a.grid, points, 2.0)
}

/// Plane-wave potential `φ = Σ A_m sin(k_m·x + θ_m)` with closed-form Hessian.
#[derive(Debug, Clone)]
pub struct PlaneWaves {
    pub waves: Vec<(f64, Vec<f64>, f64)>,
}

impl PlaneWaves {
    /// Three fixed waves in dimension `d`.
    pub fn standard(d: usize) -> Self {
        let k = |s: f64| {
            (0..d)
                .map(|a| s * (1.0 + 0.37 * a as f64) * if a % 2 == 0 { 1.0 } else { -1.0 })
                .collect()
        };
        PlaneWaves {
            waves: vec![
                (1.0, k(1.3), 0.2),
                (0.6, k(0.8).into_iter().rev().collect(), 1.1),
                (0.4, vec![2.1; d], -0.4),
            ],
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.waves
            .iter()
            .map(|(a, k, th)| a * (dot(k, x) + th).sin())
            .sum()
    }

    pub fn hessian(&self, x: &[f64], i: usize, j: usize) -> f64 {
        self.waves
            .iter()
            .map(|(a, k, th)| -a * k[i] * k[j] * (dot(k, x) + th).sin())
            .sum()
    }

    /// Traceless part of the Hessian sampled on a flat grid.
    pub fn traceless_hessian(&self, grid: HalfSpaceGrid) -> TensorField {
        let d = grid.dim();
        let mut t = TensorField::covariant(grid, 2, 0.0);
        t.index_weight = 0.0;
        for p in 0..grid.len() {
            let c = grid.point(p);
            let x = &c[..d];
            let tr: f64 = (0..d).map(|i| self.hessian(x, i, i)).sum();
            for i in 0..d {
                for j in 0..d {
                    let delta = if i == j { tr / d as f64 } else { 0.0 };
                    t.comps[i * d + j][p] = self.hessian(x, i, j) - delta;
                }
            }
        }
        t.with_symmetry(Symmetry::Symmetric(0, 1))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flat box `[0, 1] × [−1/2, 1/2]^n` with `nodes` points per axis.
pub fn unit_box(n: usize, nodes: usize) -> Result<HalfSpaceGrid> {
    HalfSpaceGrid::build(n, 0.0, 1.0, nodes, 0.5, nodes)
}

/// Errors of one manufactured Codazzi study at a given resolution.
#[derive(Debug, Clone, Copy)]
pub struct ManufacturedErrors {
    pub nodes: usize,
    pub solution_l2: f64,
    pub reduction_l2: f64,
    pub estimate_ratio: f64,
}

/// Residual of the manufactured traceless Hessian, the flat solve from its
/// boundary values and both error measures.
pub fn manufactured_study(n: usize, nodes: usize) -> Result<ManufacturedErrors> {
    let grid = unit_box(n, nodes)?;
    let exact = PlaneWaves::standard(grid.dim()).traceless_hessian(grid);
    let f = codazzi_residual(None, &exact)?;
    let sol = solve_codazzi_flat(
        &f,
        &exact,
        Tolerance {
            relative: 1e-12,
            max_iter: 20_000,
        },
    )?;
    let all: Vec<usize> = (0..grid.len()).collect();
    let inner = inner_points(&grid, 0.25);
    let reduced = poisson_reduce(&f)?;
    Ok(ManufacturedErrors {
        nodes,
        solution_l2: l2_difference(&sol.t, &exact, &all),
        reduction_l2: l2_difference(&reduced, &flat_laplacian(&exact), &inner),
        estimate_ratio: estimate_ratio(&sol.t, &f, 2.0, 0.25),
    })
}
