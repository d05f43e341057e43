//! Harmonic coordinates near infinity.
//!
//! A boundary chart solves `∂_a(A^{ab}∂_b y) = 0`, `A = ḡ⁻¹√det ḡ`, on the
//! unit ball of zoomed coordinates `z = λ(x − c)` with `y = z` on the sphere.
//! The chart functions are then extended into the interior as `φ = φ₀ + φ₁`
//! with `φ₀` constant along `w` and `Δφ₁ = −Δφ₀`, `φ₁ = 0` on `w = w0` and the
//! lateral faces and `∂_wφ₁ = 0` on the top face.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::elliptic::{self, Lateral, Operator, Top};
use crate::error::{Error, Result};
use crate::field::{ScalarField, Slot, TensorField};
use crate::grid::{HalfSpaceGrid, ReportingRegion};
use crate::sparse::{cg, CsrBuilder, Tolerance};
use crate::tensor_core::{
    christoffel_zero_shift, curvature_tensors, hessian_with, inner_gradient, laplacian, raise_all,
    trace, ZeroShiftMetric,
};
use crate::window_norms::{fit_decay_rate, station_sup, weighted_local_norm, DecayFit};

/// Boundary metric `ḡ_∞` as a function of the boundary point.
pub type BoundaryMetric<'a> = &'a dyn Fn(&[f64]) -> DMatrix<f64>;

/// Accept a chart when `det ∂y/∂z` stays above this.
pub const JACOBIAN_FLOOR: f64 = 0.5;
/// Smallest eigenvalue ratio of `ḡ_∞` accepted on a chart.
pub const ELLIPTICITY_FLOOR: f64 = 0.25;
pub const MAX_ZOOM: f64 = 1024.0;

/// Cartesian nodes on `[−1, 1]^n`, `m` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartGrid {
    pub n: usize,
    pub m: usize,
}

impl ChartGrid {
    pub fn h(&self) -> f64 {
        2.0 / (self.m - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, p: usize) -> [usize; 2] {
        if self.n == 1 {
            [p, 0]
        } else {
            [p / self.m, p % self.m]
        }
    }

    pub fn z(&self, p: usize) -> Vec<f64> {
        let idx = self.index(p);
        (0..self.n)
            .map(|a| -1.0 + idx[a] as f64 * self.h())
            .collect()
    }

    fn stride(&self, a: usize) -> usize {
        if self.n == 1 || a == 1 {
            1
        } else {
            self.m
        }
    }

    /// Nodes strictly inside the unit ball carry unknowns.
    pub fn inside(&self, p: usize) -> bool {
        self.z(p).iter().map(|v| v * v).sum::<f64>() < 1.0 - 1e-12
    }

    /// Multilinear interpolation, zero outside the box.
    pub fn interpolate(&self, v: &[f64], z: &[f64]) -> f64 {
        let h = self.h();
        let mut base = [0usize; 2];
        let mut frac = [0.0; 2];
        for a in 0..self.n {
            if z[a].abs() > 1.0 {
                return 0.0;
            }
            let s = ((z[a] + 1.0) / h).min((self.m - 1) as f64 - 1e-12);
            base[a] = s.floor() as usize;
            frac[a] = s - base[a] as f64;
        }
        let mut out = 0.0;
        for corner in 0..(1 << self.n) {
            let mut wgt = 1.0;
            let mut p = 0;
            for a in 0..self.n {
                let up = (corner >> a) & 1;
                wgt *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
                p += (base[a] + up) * self.stride(a);
            }
            out += wgt * v[p];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryChart {
    pub center: Vec<f64>,
    pub lambda: f64,
    pub grid: ChartGrid,
    /// `u^μ = y^μ − z^μ` at the chart nodes, zero outside the ball.
    pub u: Vec<Vec<f64>>,
    pub jacobian_min: f64,
    /// Largest finite-difference `|∂u|`.
    pub max_gradient: f64,
}

impl BoundaryChart {
    /// Chart coordinate `y^μ_∞` in `x` units: `c + (z + u(z))/λ`.
    pub fn y(&self, mu: usize, x: &[f64]) -> f64 {
        let z: Vec<f64> = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| self.lambda * (a - c))
            .collect();
        let inside: f64 = z.iter().map(|v| v * v).sum();
        let u = if inside < 1.0 {
            self.grid.interpolate(&self.u[mu], &z)
        } else {
            0.0
        };
        self.center[mu] + (z[mu] + u) / self.lambda
    }

    pub fn identity(n: usize) -> Self {
        let grid = ChartGrid { n, m: 9 };
        BoundaryChart {
            center: vec![0.0; n],
            lambda: 1.0,
            grid,
            u: vec![vec![0.0; grid.len()]; n],
            jacobian_min: 1.0,
            max_gradient: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ChartAttempt {
    Accepted(BoundaryChart),
    /// Jacobian bound failed; carries the gradient proxy for the `C¹` size of `u`.
    Retry {
        max_gradient: f64,
        jacobian_min: f64,
    },
}

fn coefficient(gb: BoundaryMetric, center: &[f64], lambda: f64, z: &[f64]) -> DMatrix<f64> {
    let x: Vec<f64> = z.iter().zip(center).map(|(a, c)| c + a / lambda).collect();
    let g = gb(&x);
    let det = g.determinant();
    g.try_inverse().expect("boundary metric invertible") * det.sqrt()
}

/// Solve `∂_a(A^{ab}∂_b y) = f` on the unit ball, `y = data` outside it.
pub fn solve_divergence_dirichlet(
    gb: BoundaryMetric,
    center: &[f64],
    lambda: f64,
    grid: ChartGrid,
    f: &dyn Fn(&[f64]) -> f64,
    data: &dyn Fn(&[f64]) -> f64,
) -> Result<Vec<f64>> {
    let n = grid.n;
    let h = grid.h();
    let unknown: Vec<Option<usize>> = {
        let mut k = 0;
        (0..grid.len())
            .map(|p| {
                grid.inside(p).then(|| {
                    k += 1;
                    k - 1
                })
            })
            .collect()
    };
    let nu = unknown.iter().flatten().count();
    let mut rows = vec![Vec::<(usize, f64)>::new(); nu];
    let mut rhs = vec![0.0; nu];
    let shift = |p: usize, a: usize, s: isize| (p as isize + s * grid.stride(a) as isize) as usize;
    for p in 0..grid.len() {
        let Some(row) = unknown[p] else { continue };
        let z = grid.z(p);
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for a in 0..n {
            for s in [-1.0, 1.0] {
                let mut zf = z.clone();
                zf[a] += 0.5 * s * h;
                let c = coefficient(gb, center, lambda, &zf)[(a, a)] / (h * h);
                entries.push((shift(p, a, s as isize), c));
                entries.push((p, -c));
            }
            for b in 0..n {
                if a == b {
                    continue;
                }
                for sa in [-1isize, 1] {
                    let mut za = z.clone();
                    za[a] += sa as f64 * h;
                    let c =
                        coefficient(gb, center, lambda, &za)[(a, b)] * sa as f64 / (4.0 * h * h);
                    let q = shift(p, a, sa);
                    entries.push((shift(q, b, 1), c));
                    entries.push((shift(q, b, -1), -c));
                }
            }
        }
        // Negated so the assembled matrix is positive definite.
        rhs[row] = -f(&z);
        for (q, c) in entries {
            match unknown[q] {
                Some(col) => rows[row].push((col, -c)),
                None => rhs[row] += c * data(&grid.z(q)),
            }
        }
    }
    let mut bld = CsrBuilder::new();
    for r in rows {
        for (c, v) in r {
            bld.add(c, v);
        }
        bld.finish_row();
    }
    let a = bld.build();
    let mut y = vec![0.0; nu];
    cg(&a, &rhs, &mut y, Tolerance::default())?;
    Ok((0..grid.len())
        .map(|p| unknown[p].map_or_else(|| data(&grid.z(p)), |k| y[k]))
        .collect())
}

fn check_ellipticity(
    gb: BoundaryMetric,
    center: &[f64],
    lambda: f64,
    grid: ChartGrid,
) -> Result<()> {
    for p in (0..grid.len()).filter(|&p| grid.inside(p)) {
        let x: Vec<f64> = grid
            .z(p)
            .iter()
            .zip(center)
            .map(|(a, c)| c + a / lambda)
            .collect();
        let g = gb(&x);
        let ev = g.clone().symmetric_eigenvalues();
        let (lo, hi) = (ev.min(), ev.max());
        if !(lo > 0.0) || lo < ELLIPTICITY_FLOOR * hi {
            return Err(Error::Precondition(format!(
                "boundary metric eigenvalues [{lo:.3}, {hi:.3}] at {x:?}"
            )));
        }
    }
    Ok(())
}

pub fn solve_boundary_harmonic(
    gb: BoundaryMetric,
    center: &[f64],
    lambda: f64,
    grid: ChartGrid,
) -> Result<ChartAttempt> {
    if lambda < 1.0 {
        return Err(Error::Precondition(format!("zoom λ = {lambda} < 1")));
    }
    if center.len() != grid.n {
        return Err(Error::Data("chart center has the wrong dimension".into()));
    }
    check_ellipticity(gb, center, lambda, grid)?;
    let n = grid.n;
    let mut u = Vec::with_capacity(n);
    for mu in 0..n {
        let y = solve_divergence_dirichlet(gb, center, lambda, grid, &|_| 0.0, &|z| z[mu])?;
        u.push(
            (0..grid.len())
                .map(|p| {
                    if grid.inside(p) {
                        y[p] - grid.z(p)[mu]
                    } else {
                        0.0
                    }
                })
                .collect::<Vec<f64>>(),
        );
    }
    let h = grid.h();
    let mut jacobian_min = f64::INFINITY;
    let mut max_gradient: f64 = 0.0;
    for p in (0..grid.len()).filter(|&p| grid.inside(p)) {
        let mut jac = DMatrix::<f64>::identity(n, n);
        for mu in 0..n {
            for a in 0..n {
                let s = grid.stride(a);
                let du = (u[mu][p + s] - u[mu][p - s]) / (2.0 * h);
                jac[(mu, a)] += du;
                max_gradient = max_gradient.max(du.abs());
            }
        }
        jacobian_min = jacobian_min.min(jac.determinant());
    }
    if jacobian_min < JACOBIAN_FLOOR {
        return Ok(ChartAttempt::Retry {
            max_gradient,
            jacobian_min,
        });
    }
    Ok(ChartAttempt::Accepted(BoundaryChart {
        center: center.to_vec(),
        lambda,
        grid,
        u,
        jacobian_min,
        max_gradient,
    }))
}

/// Double `λ` from 1 until the chart is accepted.
pub fn zoom_lambda_search(
    gb: BoundaryMetric,
    center: &[f64],
    grid: ChartGrid,
) -> Result<BoundaryChart> {
    let mut lambda = 1.0;
    let mut last = f64::NAN;
    while lambda <= MAX_ZOOM {
        match solve_boundary_harmonic(gb, center, lambda, grid)? {
            ChartAttempt::Accepted(chart) => return Ok(chart),
            ChartAttempt::Retry { max_gradient, .. } => last = max_gradient,
        }
        lambda *= 2.0;
    }
    Err(Error::Domain(format!(
        "no chart up to λ = {MAX_ZOOM}; last gradient {last:.3}"
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteriorHarmonic {
    pub phi: ScalarField,
    pub phi0: ScalarField,
    pub phi1: ScalarField,
    /// `|ψ|_g` at every point.
    pub psi_norm: Vec<f64>,
    /// `⟨dw, dφ⟩` at every point.
    pub dw_dphi: Vec<f64>,
    pub harmonic_residual: f64,
    pub iterations: usize,
}

impl InteriorHarmonic {
    pub fn dw_dphi_fit(&self) -> Result<DecayFit> {
        let grid = self.phi.grid;
        let (st, v) = station_sup(&grid, &ReportingRegion::of(&grid)?, &self.dw_dphi);
        fit_decay_rate(&st, &v)
    }

    pub fn psi_fit(&self) -> Result<DecayFit> {
        let grid = self.phi.grid;
        let (st, v) = station_sup(&grid, &ReportingRegion::of(&grid)?, &self.psi_norm);
        fit_decay_rate(&st, &v)
    }
}

/// `ǧ = dw² + e^{2w}ḡ_∞` on the grid.
pub fn reference_metric(grid: &HalfSpaceGrid, gb: BoundaryMetric) -> TensorField {
    let d = grid.dim();
    let mut g = TensorField::covariant(*grid, 2, 0.0);
    for p in 0..grid.len() {
        let c = grid.point(p);
        let m = gb(&c[1..d]);
        g.comps[0][p] = 1.0;
        for a in 1..d {
            for b in 1..d {
                g.comps[a * d + b][p] = (2.0 * c[0]).exp() * m[(a - 1, b - 1)];
            }
        }
    }
    g
}

/// `ψ = −(√(det ǧ/det g) − 1)dφ₀ + √(det ǧ/det g)·[(g⁻¹ − ǧ⁻¹)dφ₀]♭`, lowered with `g`.
fn psi_norm(metric: &ZeroShiftMetric, check: &TensorField, phi0: &ScalarField) -> Vec<f64> {
    let grid = metric.grid;
    let d = grid.dim();
    let dphi: Vec<Vec<f64>> = (0..d).map(|a| phi0.d(a)).collect();
    (0..grid.len())
        .map(|p| {
            let g = DMatrix::from_fn(d, d, |a, b| metric.g.comps[a * d + b][p]);
            let gc = DMatrix::from_fn(d, d, |a, b| check.comps[a * d + b][p]);
            let ratio = (gc.determinant() / g.determinant()).sqrt();
            let ginv = g.clone().try_inverse().unwrap();
            let gcinv = gc.try_inverse().unwrap();
            let dp = nalgebra::DVector::from_fn(d, |a, _| dphi[a][p]);
            let psi = -(ratio - 1.0) * &dp + ratio * (&g * ((&ginv - gcinv) * &dp));
            (psi.transpose() * &ginv * &psi)[(0, 0)].max(0.0).sqrt()
        })
        .collect()
}

pub fn extend_harmonic_interior(
    metric: &ZeroShiftMetric,
    chart: &BoundaryChart,
    mu: usize,
    gb: BoundaryMetric,
) -> Result<InteriorHarmonic> {
    let grid = metric.grid;
    if chart.grid.n != grid.n || mu >= grid.n {
        return Err(Error::Data(format!(
            "chart of dimension {} on a grid with n = {}",
            chart.grid.n, grid.n
        )));
    }
    let ginv = metric.inverse();
    let gamma = christoffel_zero_shift(metric);
    let phi0 = ScalarField::from_fn(grid, 0.0, |c| chart.y(mu, &c[1..]));
    let lap0 = trace(&ginv, &hessian_with(&gamma, &phi0));
    let source: Vec<f64> = lap0.values.iter().map(|v| -v).collect();
    let op = Operator {
        ginv: &ginv,
        gamma: &gamma,
        weight: 0.0,
        shift: 0.0,
        top: vec![Top::LogDerivative(0.0); grid.slice_len()],
        lateral: Lateral::Dirichlet,
    };
    let (phi1, stats, _) = elliptic::solve(&op, &source, None, Tolerance::default())?;
    let phi = ScalarField {
        grid,
        values: phi0
            .values
            .iter()
            .zip(&phi1.values)
            .map(|(a, b)| a + b)
            .collect(),
        weight: 0.0,
    };
    let region = ReportingRegion::of(&grid)?;
    let lap = trace(&ginv, &hessian_with(&gamma, &phi));
    let scale = phi.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let harmonic_residual = region
        .points(&grid)
        .into_iter()
        .map(|p| lap.values[p].abs())
        .fold(0.0, f64::max)
        / scale;
    let dphi: Vec<Vec<f64>> = (0..grid.dim()).map(|a| phi.d(a)).collect();
    let dw: Vec<Vec<f64>> = (0..grid.dim())
        .map(|a| {
            if a == 0 {
                vec![1.0; grid.len()]
            } else {
                vec![0.0; grid.len()]
            }
        })
        .collect();
    let dw_dphi = inner_gradient(&ginv, &dw, &dphi);
    let check = reference_metric(&grid, gb);
    Ok(InteriorHarmonic {
        psi_norm: psi_norm(metric, &check, &phi0),
        phi,
        phi0,
        phi1,
        dw_dphi,
        harmonic_residual,
        iterations: stats.iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpaceSolution {
    pub u: ScalarField,
    /// `max |u + u∘R|` before projecting onto odd functions.
    pub oddness_defect: f64,
    /// `‖u‖_δ / (‖v‖_δ + ‖w‖_δ)` when the grid is tall enough to measure it.
    pub constant: Option<f64>,
}

/// Mirror `x¹ ↦ −x¹` of a flat index.
fn mirror(grid: &HalfSpaceGrid, p: usize) -> usize {
    let mut idx = grid.unflatten(p);
    idx[1] = grid.nx - 1 - idx[1];
    grid.flatten(&idx[..=grid.n])
}

/// Model problem `Δu = ∇^i v_i + w` on `{x¹ < 0}` of hyperbolic space with
/// `u = 0` on `{x¹ = 0}`, solved on the whole box after extending `w` and
/// `v_α` (α ≠ 1) oddly and `v_1` evenly. The box is symmetric in `x¹`; the
/// inputs are read on `x¹ ≤ 0` only.
pub fn half_space_dirichlet_solver(
    grid: &HalfSpaceGrid,
    v: &TensorField,
    w_src: &ScalarField,
    delta: f64,
) -> Result<HalfSpaceSolution> {
    let n = grid.n;
    if !(delta > 0.0 && delta < n as f64) {
        return Err(Error::Precondition(format!(
            "weight δ = {delta} outside (0, {n})"
        )));
    }
    if grid.nx.is_multiple_of(2) {
        return Err(Error::Data(
            "reflection needs an odd number of lateral nodes".into(),
        ));
    }
    let d = grid.dim();
    let metric = crate::metric_zoo::make_hyperbolic(grid);
    let ginv = metric.inverse();
    let gamma = christoffel_zero_shift(&metric);
    let region = ReportingRegion::of(grid).ok();
    let mut vs = v.clone();
    let mut ws = w_src.clone();
    for p in 0..grid.len() {
        if grid.point(p)[1] > 0.0 {
            let q = mirror(grid, p);
            ws.values[p] = -w_src.values[q];
            for a in 0..d {
                vs.comps[a][p] = if a == 1 {
                    v.comps[a][q]
                } else {
                    -v.comps[a][q]
                };
            }
        } else if grid.point(p)[1] == 0.0 {
            ws.values[p] = 0.0;
            for a in 0..d {
                if a != 1 {
                    vs.comps[a][p] = 0.0;
                }
            }
        }
    }
    let v_norm: Vec<f64> = (0..grid.len())
        .map(|p| {
            let comps: Vec<f64> = (0..d).map(|a| vs.comps[a][p]).collect();
            let gi: Vec<f64> = (0..d * d).map(|c| ginv.comps[c][p]).collect();
            let up = raise_all(&gi, &comps, 1, d);
            comps
                .iter()
                .zip(&up)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .max(0.0)
                .sqrt()
        })
        .collect();
    for (name, vals) in [("w", &ws.values), ("v", &v_norm)] {
        let Some(region) = region.as_ref() else { break };
        let (st, sup) = station_sup(grid, region, vals);
        if let Ok(fit) = fit_decay_rate(&st, &sup) {
            if let Some(rate) = fit.rate() {
                if rate < delta - 0.1 {
                    return Err(Error::Precondition(format!(
                        "{name} decays at {rate:.3}, below δ = {delta}"
                    )));
                }
            }
        }
    }
    let mut div = vec![0.0; grid.len()];
    for i in 0..d {
        for j in 0..d {
            let dv = fd_d(&vs, j, i);
            for p in 0..grid.len() {
                let mut s = dv[p];
                for k in 0..d {
                    s -= gamma.comps[(k * d + i) * d + j][p] * vs.comps[k][p];
                }
                div[p] += ginv.comps[i * d + j][p] * s;
            }
        }
    }
    let source: Vec<f64> = div.iter().zip(&ws.values).map(|(a, b)| a + b).collect();
    let op = Operator {
        ginv: &ginv,
        gamma: &gamma,
        weight: 0.0,
        shift: 0.0,
        top: vec![Top::Dirichlet; grid.slice_len()],
        lateral: Lateral::Dirichlet,
    };
    let (raw, _, _) = elliptic::solve(&op, &source, None, Tolerance::default())?;
    let mut oddness_defect: f64 = 0.0;
    let mut u = raw.clone();
    for p in 0..grid.len() {
        let q = mirror(grid, p);
        oddness_defect = oddness_defect.max((raw.values[p] + raw.values[q]).abs());
        u.values[p] = 0.5 * (raw.values[p] - raw.values[q]);
    }
    let v_field = ScalarField {
        grid: *grid,
        values: v_norm,
        weight: 0.0,
    };
    let constant = (|| -> Result<f64> {
        let region = region.ok_or_else(|| Error::Range("no reporting region".into()))?;
        let nu = weighted_local_norm(&u, 0, 2.0, delta, &region)?;
        let nv = weighted_local_norm(&v_field, 0, 2.0, delta, &region)?;
        let nw = weighted_local_norm(&ws, 0, 2.0, delta, &region)?;
        Ok(nu / (nv + nw).max(f64::MIN_POSITIVE))
    })()
    .ok();
    Ok(HalfSpaceSolution {
        u,
        oddness_defect,
        constant,
    })
}

/// `∂_axis v_j` of a covariant 1-form.
fn fd_d(v: &TensorField, j: usize, axis: usize) -> Vec<f64> {
    v.d_comp(&[j], axis)
}

/// Residual of `−Δ⟨dt,dφ⟩ − (n−1)⟨dt,dφ⟩ = −2(Ric + ng)(dt,dφ) − 2⟨T, Hess φ⟩`
/// divided by `t`, with `T = Hess t − t g`.
pub fn verify_dtdphi_identity(
    metric: &ZeroShiftMetric,
    t: &ScalarField,
    phi: &ScalarField,
) -> Result<ScalarField> {
    let grid = metric.grid;
    if t.grid != grid || phi.grid != grid {
        return Err(Error::Data("fields live on different grids".into()));
    }
    let d = grid.dim();
    let n = grid.n as f64;
    let ginv = metric.inverse();
    let gamma = christoffel_zero_shift(metric);
    let curv = curvature_tensors(metric);
    let dt: Vec<Vec<f64>> = (0..d).map(|a| t.d(a)).collect();
    let dphi: Vec<Vec<f64>> = (0..d).map(|a| phi.d(a)).collect();
    let x = ScalarField {
        grid,
        values: inner_gradient(&ginv, &dt, &dphi),
        weight: t.weight + phi.weight,
    };
    let lap_x = laplacian(metric, &x);
    let ht = hessian_with(&gamma, t);
    let hphi = hessian_with(&gamma, phi);
    let mut values = vec![0.0; grid.len()];
    for p in 0..grid.len() {
        let gi: Vec<f64> = (0..d * d).map(|c| ginv.comps[c][p]).collect();
        // Raise both gradients and contract against Ric + n g.
        let ut = raise_all(&gi, &(0..d).map(|a| dt[a][p]).collect::<Vec<_>>(), 1, d);
        let up = raise_all(&gi, &(0..d).map(|a| dphi[a][p]).collect::<Vec<_>>(), 1, d);
        let mut ric = 0.0;
        for i in 0..d {
            for j in 0..d {
                ric += (curv.ricci.comps[i * d + j][p] + n * metric.g.comps[i * d + j][p])
                    * ut[i]
                    * up[j];
            }
        }
        let tt: Vec<f64> = (0..d * d)
            .map(|c| ht.comps[c][p] - t.values[p] * metric.g.comps[c][p])
            .collect();
        let tt_up = raise_all(&gi, &tt, 2, d);
        let inner: f64 = tt_up
            .iter()
            .zip(0..d * d)
            .map(|(a, c)| a * hphi.comps[c][p])
            .sum();
        let lhs = -lap_x.values[p] - (n - 1.0) * x.values[p];
        let rhs = -2.0 * ric - 2.0 * inner;
        values[p] = (lhs - rhs) / t.values[p];
    }
    Ok(ScalarField {
        grid,
        values,
        weight: 0.0,
    })
}

/// Contravariant slot list for a 1-form, used when callers build `v`.
pub fn one_form(grid: &HalfSpaceGrid) -> TensorField {
    TensorField::zeros(*grid, vec![Slot::Lower], 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal_factor::solve_eigenfunction_on;
    use crate::metric_zoo::{make_hyperbolic, make_perturbed, ModelSpec, Profile};

    fn flat(n: usize) -> impl Fn(&[f64]) -> DMatrix<f64> {
        move |_| DMatrix::identity(n, n)
    }

    fn bumped(n: usize, amp: f64) -> impl Fn(&[f64]) -> DMatrix<f64> {
        move |x| {
            let b = Profile::Bump6.eval(x);
            DMatrix::identity(n, n) + crate::metric_zoo::pattern(n) * (amp * b)
        }
    }

    #[test]
    fn flat_chart_is_identity() {
        for n in [1, 2] {
            let g = flat(n);
            let grid = ChartGrid {
                n,
                m: if n == 1 { 65 } else { 33 },
            };
            let chart = zoom_lambda_search(&g, &vec![0.0; n], grid).unwrap();
            assert_eq!(chart.lambda, 1.0);
            assert!(chart.u.iter().flatten().all(|v| v.abs() < 1e-9));
            assert!((chart.y(0, &vec![0.3; n]) - 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn manufactured_chart_solution_converges() {
        // y* = z¹ + 0.1(1 − |z|²)³ sin(z¹ + 2z²) matches the data z¹ to third
        // order across the staircase boundary.
        let g = bumped(2, 0.1);
        let exact = |z: &[f64]| {
            let r2 = z[0] * z[0] + z[1] * z[1];
            z[0] + 0.1 * (1.0 - r2).powi(3) * (z[0] + 2.0 * z[1]).sin()
        };
        let grad = |z: &[f64]| {
            let r2 = z[0] * z[0] + z[1] * z[1];
            let s = (z[0] + 2.0 * z[1]).sin();
            let c = (z[0] + 2.0 * z[1]).cos();
            let q = (1.0 - r2).powi(3);
            let dq = |a: usize| -6.0 * (1.0 - r2).powi(2) * z[a];
            [
                1.0 + 0.1 * (dq(0) * s + q * c),
                0.1 * (dq(1) * s + 2.0 * q * c),
            ]
        };
        let center = [0.1, -0.2];
        let flux_div = |z: &[f64]| {
            let eps = 1e-4;
            let mut out = 0.0;
            for a in 0..2 {
                for s in [-1.0, 1.0] {
                    let mut zz = z.to_vec();
                    zz[a] += s * eps;
                    let am = coefficient(&g, &center, 2.0, &zz);
                    let gr = grad(&zz);
                    out += s * (am[(a, 0)] * gr[0] + am[(a, 1)] * gr[1]) / (2.0 * eps);
                }
            }
            out
        };
        let err = |m: usize| {
            let grid = ChartGrid { n: 2, m };
            let y =
                solve_divergence_dirichlet(&g, &center, 2.0, grid, &flux_div, &|z| z[0]).unwrap();
            (0..grid.len())
                .filter(|&p| grid.inside(p))
                .map(|p| (y[p] - exact(&grid.z(p))).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(17), err(33), err(65));
        let (o1, o2) = ((e1 / e2).log2(), (e2 / e3).log2());
        assert!(o1 > 1.7 && o2 > 1.7, "{e1} {e2} {e3}");
    }

    #[test]
    fn maximum_principle_on_chart() {
        let g = bumped(2, 0.3);
        let grid = ChartGrid { n: 2, m: 33 };
        let ChartAttempt::Accepted(chart) =
            solve_boundary_harmonic(&g, &[0.0, 0.0], 1.0, grid).unwrap()
        else {
            panic!("chart rejected");
        };
        for mu in 0..2 {
            let y: Vec<f64> = (0..grid.len())
                .map(|p| grid.z(p)[mu] + chart.u[mu][p])
                .collect();
            let bmax = (0..grid.len())
                .filter(|&p| !grid.inside(p))
                .map(|p| y[p])
                .fold(f64::MIN, f64::max);
            let bmin = (0..grid.len())
                .filter(|&p| !grid.inside(p))
                .map(|p| y[p])
                .fold(f64::MAX, f64::min);
            for p in (0..grid.len()).filter(|&p| grid.inside(p)) {
                assert!(y[p] <= bmax + 1e-12 && y[p] >= bmin - 1e-12);
            }
        }
    }

    #[test]
    fn holder_metric_gradient_scales_with_zoom() {
        let alpha = 0.5;
        let g = move |x: &[f64]| DMatrix::from_element(1, 1, 1.0 + 0.3 * x[0].abs().powf(alpha));
        let grid = ChartGrid { n: 1, m: 257 };
        let grads: Vec<f64> = [2.0, 4.0, 8.0]
            .iter()
            .map(
                |&l| match solve_boundary_harmonic(&g, &[0.0], l, grid).unwrap() {
                    ChartAttempt::Accepted(c) => c.max_gradient,
                    ChartAttempt::Retry { max_gradient, .. } => max_gradient,
                },
            )
            .collect();
        let expected = 2f64.powf(-alpha);
        for w in grads.windows(2) {
            assert!((w[1] / w[0] / expected - 1.0).abs() <= 0.25, "{grads:?}");
        }
    }

    #[test]
    fn bumped_search_is_reproducible() {
        let g = bumped(2, 0.1);
        let grid = ChartGrid { n: 2, m: 33 };
        let a = zoom_lambda_search(&g, &[0.2, 0.0], grid).unwrap();
        let b = zoom_lambda_search(&g, &[0.2, 0.0], grid).unwrap();
        assert!(a.lambda <= 16.0);
        assert_eq!(a, b);
    }

    #[test]
    fn adversarial_amplitude_fails() {
        let g = bumped(2, 0.9);
        let grid = ChartGrid { n: 2, m: 9 };
        assert!(zoom_lambda_search(&g, &[0.0, 0.0], grid).is_err());
    }

    #[test]
    fn hyperbolic_extension_is_exact() {
        let grid = HalfSpaceGrid::build(1, 0.0, 8.0, 161, 2.0, 33).unwrap();
        let metric = make_hyperbolic(&grid);
        let g = flat(1);
        let ih = extend_harmonic_interior(&metric, &BoundaryChart::identity(1), 0, &g).unwrap();
        for p in 0..grid.len() {
            assert!((ih.phi.values[p] - grid.point(p)[1]).abs() < 1e-12);
            assert!(ih.psi_norm[p] < 1e-12);
        }
    }

    #[test]
    fn interior_extension_obeys_maximum_principle() {
        let grid = HalfSpaceGrid::build(1, 0.0, 8.0, 161, 2.0, 33).unwrap();
        let metric = make_perturbed(&grid, &ModelSpec::perturbed(1, 0.5, 0.05, 0.05)).unwrap();
        let g = flat(1);
        let ih = extend_harmonic_interior(&metric, &BoundaryChart::identity(1), 0, &g).unwrap();
        let faces: Vec<f64> = (0..grid.len())
            .filter(|&p| {
                let i = grid.unflatten(p);
                i[0] == 0 || i[1] == 0 || i[1] == grid.nx - 1
            })
            .map(|p| ih.phi.values[p])
            .collect();
        let hi = faces.iter().cloned().fold(f64::MIN, f64::max);
        let lo = faces.iter().cloned().fold(f64::MAX, f64::min);
        assert!(ih
            .phi
            .values
            .iter()
            .all(|&v| v <= hi + 1e-9 && v >= lo - 1e-9));
        assert!(ih.harmonic_residual < 1e-6);
    }

    #[test]
    fn psi_decays_past_order() {
        let grid = HalfSpaceGrid::build(1, 0.0, 10.0, 201, 2.0, 33).unwrap();
        let metric = make_perturbed(&grid, &ModelSpec::perturbed(1, 0.5, 0.05, 0.05)).unwrap();
        let g = flat(1);
        let ih = extend_harmonic_interior(&metric, &BoundaryChart::identity(1), 0, &g).unwrap();
        assert!(ih.psi_fit().unwrap().rate().unwrap() >= 1.5 - 0.1);
    }

    #[test]
    fn half_space_zero_data() {
        let grid = HalfSpaceGrid::build(1, 0.0, 4.0, 41, 2.0, 21).unwrap();
        let s = half_space_dirichlet_solver(
            &grid,
            &one_form(&grid),
            &ScalarField::constant(grid, 0.0),
            0.5,
        )
        .unwrap();
        assert!(s.u.values.iter().all(|v| *v == 0.0));
        let bad = half_space_dirichlet_solver(
            &grid,
            &one_form(&grid),
            &ScalarField::constant(grid, 0.0),
            1.0,
        );
        assert!(matches!(bad, Err(Error::Precondition(_))));
    }

    #[test]
    fn half_space_manufactured_odd_solution() {
        use std::f64::consts::PI;
        let err = |nw: usize, nx: usize| {
            let grid = HalfSpaceGrid::build(1, 0.0, 2.0, nw, 1.0, nx).unwrap();
            let exact = |c: &[f64]| (PI * c[1]).sin() * (PI * c[0] / 2.0).sin();
            // Δ = ∂_w² + ∂_w + e^{−2w}∂_x² on the hyperbolic plane.
            let lap = |c: &[f64]| {
                let (sw, cw) = ((PI * c[0] / 2.0).sin(), (PI * c[0] / 2.0).cos());
                let sx = (PI * c[1]).sin();
                sx * (-(PI / 2.0).powi(2) * sw + PI / 2.0 * cw)
                    - (-2.0 * c[0]).exp() * PI * PI * sx * sw
            };
            let w_src = ScalarField::from_fn(grid, 0.0, lap);
            let s = half_space_dirichlet_solver(&grid, &one_form(&grid), &w_src, 0.5).unwrap();
            (0..grid.len())
                .map(|p| (s.u.values[p] - exact(&grid.point(p)[..2])).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(21, 21), err(41, 41));
        assert!((e1 / e2).log2() > 1.8, "{e1} {e2}");
    }

    #[test]
    fn even_extension_gives_odd_solution() {
        let grid = HalfSpaceGrid::build(1, 0.0, 4.0, 41, 2.0, 21).unwrap();
        let mut v = one_form(&grid);
        for p in 0..grid.len() {
            let c = grid.point(p);
            v.comps[0][p] = (c[1] + 0.3).sin() * (-c[0]).exp();
            v.comps[1][p] = (c[1] * 2.0).cos() * (-c[0]).exp();
        }
        let w_src = ScalarField::from_fn(grid, 0.0, |c| (c[0] - c[1]).cos() * (-c[0]).exp());
        let s = half_space_dirichlet_solver(&grid, &v, &w_src, 0.5).unwrap();
        assert!(s.oddness_defect < 1e-8, "{}", s.oddness_defect);
        for p in 0..grid.len() {
            assert_eq!(s.u.values[p], -s.u.values[mirror(&grid, p)]);
        }
    }

    #[test]
    fn dtdphi_identity_vanishes_on_hyperbolic() {
        let grid = HalfSpaceGrid::build(1, 0.0, 8.0, 161, 2.0, 33).unwrap();
        let metric = make_hyperbolic(&grid);
        let t = ScalarField::from_fn(grid, 1.0, |c| c[0].exp());
        let phi = ScalarField::from_fn(grid, 0.0, |c| c[1]);
        let r = verify_dtdphi_identity(&metric, &t, &phi).unwrap();
        assert!(r.values.iter().all(|v| v.abs() <= 1e-8));
    }

    #[test]
    fn dtdphi_negative_control() {
        let res = |nw: usize, nx: usize| {
            let grid = HalfSpaceGrid::build(1, 0.0, 6.0, nw, 2.0, nx).unwrap();
            let metric = make_perturbed(&grid, &ModelSpec::perturbed(1, 0.5, 0.05, 0.05)).unwrap();
            let eig = solve_eigenfunction_on(&metric, None, Tolerance::default()).unwrap();
            let phi = ScalarField::from_fn(grid, 0.0, |c| c[1] + 0.2 * (-c[0]).exp() * c[1] * c[1]);
            let r = verify_dtdphi_identity(&metric, &eig.t, &phi).unwrap();
            let region = ReportingRegion::of(&grid).unwrap();
            region
                .points(&grid)
                .into_iter()
                .map(|p| r.values[p].abs())
                .fold(0.0, f64::max)
        };
        let (a, b) = (res(61, 17), res(121, 33));
        assert!(b > 0.5 * a, "{a} {b}");
    }
}
