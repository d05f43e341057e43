//! The radial eigenfunction `t` with `Δt = (n+1)t`, `t = e^w + t₁`, and the
//! traceless tensor `T = Hess t − t g`.
//!
//! `t₁` solves `(Δ − (n+1))t₁ = −(Δ − (n+1))e^w` with `t₁ = 0` on `w = w0`,
//! mirror conditions on the lateral faces and, on the top face, the
//! log-derivative of the source column (so only the particular solution is
//! kept, never the growing mode `e^w`). Columns with no usable source get
//! `t₁ = 0` there instead.

use serde::{Deserialize, Serialize};

use crate::elliptic::{self, Lateral, Operator, Top};
use crate::error::{Error, Result};
use crate::field::{ScalarField, TensorField};
use crate::grid::{HalfSpaceGrid, ReportingRegion, REPORT_BUFFER};
use crate::metric_zoo::MetricSource;
use crate::sparse::Tolerance;
use crate::tensor_core::{christoffel_zero_shift, hessian_with, norm_g, trace, ZeroShiftMetric};
use crate::window_norms::{fit_decay_rate, station_sup, DecayFit};

/// Largest top-face log-derivative allowed for `t₁`; `1` is the growing mode.
pub const MAX_TOP_EXPONENT: f64 = 0.9;
/// Sweep acceptance: relative sup change of `t₁` on the reporting region.
pub const SWEEP_TOLERANCE: f64 = 0.01;

/// `H = g^{μν}S_{μν}` with `S_{μν} = ∂₀g_{μν}/(2N)`.
pub fn mean_curvature(metric: &ZeroShiftMetric) -> ScalarField {
    let grid = metric.grid;
    let d = grid.dim();
    let ginv = metric.inverse();
    let mut h = vec![0.0; grid.len()];
    for a in 1..d {
        for b in 1..d {
            let dg = metric.g.d_comp(&[a, b], 0);
            for p in 0..grid.len() {
                h[p] += ginv.comps[a * d + b][p] * dg[p] / (2.0 * metric.lapse.values[p]);
            }
        }
    }
    ScalarField {
        grid,
        values: h,
        weight: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepStep {
    pub w_max: f64,
    pub half_width: f64,
    /// Relative sup change of `t₁` against the previous box.
    pub change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub relative_residual: f64,
    pub tolerance: f64,
    pub rhs_norm: f64,
    /// Columns whose top face carries the source log-derivative.
    pub log_derivative_columns: usize,
    pub sweep: Vec<SweepStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialEigenfunction {
    pub t: ScalarField,
    pub t1: ScalarField,
    pub diagnostics: SolverDiagnostics,
    /// Only used to report the barrier exponent `1 − a`.
    pub a_hint: Option<f64>,
}

impl RadialEigenfunction {
    /// Rate fit of `|t₁|`; a negative rate is growth.
    pub fn t1_fit(&self) -> Result<DecayFit> {
        let region = ReportingRegion::of(&self.t.grid)?;
        let (st, v) = station_sup(&self.t.grid, &region, &self.t1.values);
        fit_decay_rate(&st, &v)
    }

    pub fn barrier_exponent(&self) -> Option<f64> {
        self.a_hint.map(|a| 1.0 - a)
    }
}

/// `(Δ − (n+1))e^w` with the discrete Christoffel symbols. The weighted
/// stencils differentiate `e^w` exactly, so this is what the solver sees.
fn residual_of_exponential(ginv: &TensorField, gamma: &TensorField) -> Vec<f64> {
    let grid = ginv.grid;
    let t0 = ScalarField::from_fn(grid, 1.0, |c| c[0].exp());
    let lap = trace(ginv, &hessian_with(gamma, &t0));
    let np1 = (grid.n + 1) as f64;
    lap.values
        .iter()
        .zip(&t0.values)
        .map(|(l, t)| l - np1 * t)
        .collect()
}

fn top_conditions(grid: &HalfSpaceGrid, source: &[f64]) -> Vec<Top> {
    let sl = grid.slice_len();
    let dw = grid.dw();
    let m = ((0.5 / dw).round() as usize).clamp(1, grid.nw - 3);
    let (ia, ib) = (grid.nw - 2, grid.nw - 2 - m);
    let n = grid.n as f64;
    (0..sl)
        .map(|col| {
            let fa = source[ia * sl + col];
            let fb = source[ib * sl + col];
            let scale = 1e-10 * grid.w(ia).exp();
            if fa * fb > 0.0 && fa.abs() > scale && fb.abs() > scale {
                let kappa = (fa / fb).ln() / (grid.w(ia) - grid.w(ib));
                Top::LogDerivative(kappa.clamp(-n, MAX_TOP_EXPONENT) - 1.0)
            } else {
                Top::Dirichlet
            }
        })
        .collect()
}

/// One solve on a fixed metric, no truncation sweep.
pub fn solve_eigenfunction_on(
    metric: &ZeroShiftMetric,
    guess: Option<&[f64]>,
    tol: Tolerance,
) -> Result<RadialEigenfunction> {
    let grid = metric.grid;
    let ginv = metric.inverse();
    let gamma = christoffel_zero_shift(metric);
    let lt0 = residual_of_exponential(&ginv, &gamma);
    let source: Vec<f64> = lt0.iter().map(|v| -v).collect();
    let top = top_conditions(&grid, &source);
    let log_derivative_columns = top
        .iter()
        .filter(|t| matches!(t, Top::LogDerivative(_)))
        .count();
    let op = Operator {
        ginv: &ginv,
        gamma: &gamma,
        weight: 1.0,
        shift: -((grid.n + 1) as f64),
        top,
        lateral: Lateral::Neumann,
    };
    let (t1, stats, rhs_norm) = elliptic::solve(&op, &source, guess, tol)?;
    let t = ScalarField::from_fn(grid, 1.0, |c| c[0].exp());
    let t = ScalarField {
        values: t
            .values
            .iter()
            .zip(&t1.values)
            .map(|(a, b)| a + b)
            .collect(),
        ..t
    };
    let region = ReportingRegion::of(&grid)?;
    if let Some(p) = region
        .points(&grid)
        .into_iter()
        .find(|&p| !(t.values[p] > 0.0))
    {
        return Err(Error::Consistency(format!(
            "t = {} ≤ 0 at reported point {p}",
            t.values[p]
        )));
    }
    Ok(RadialEigenfunction {
        t,
        t1,
        diagnostics: SolverDiagnostics {
            iterations: stats.iterations,
            relative_residual: stats.relative_residual,
            tolerance: tol.relative,
            rhs_norm,
            log_derivative_columns,
            sweep: Vec::new(),
        },
        a_hint: None,
    })
}

/// Sup of `|a − b|` over the reporting points of `small`, relative to sup `|a|`,
/// where `b` lives on a box grown by whole cells.
pub fn relative_change(small: &ScalarField, big: &ScalarField) -> f64 {
    let (gs, gb) = (small.grid, big.grid);
    let shift = ((gb.nx - gs.nx) / 2) as isize;
    let region = ReportingRegion::of(&gs).expect("accepted grids have a reporting region");
    let mut diff: f64 = 0.0;
    let mut size: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for p in region.points(&gs) {
        let mut idx = gs.unflatten(p);
        for a in 1..=gs.n {
            idx[a] = (idx[a] as isize + shift) as usize;
        }
        let q = gb.flatten(&idx[..=gs.n]);
        diff = diff.max((small.values[p] - big.values[q]).abs());
        size = size.max(small.values[p].abs());
        scale = scale.max(gs.w(idx[0]).exp());
    }
    diff / size.max(1e-10 * scale)
}

/// Solve on `grid`, then confirm the result on a box one unit taller and one
/// unit wider on each side.
pub fn solve_radial_eigenfunction(
    source: &dyn MetricSource,
    grid: &HalfSpaceGrid,
    a_hint: Option<f64>,
) -> Result<RadialEigenfunction> {
    if let Some(a) = a_hint {
        if (-a * grid.w_max).exp() > 0.01 {
            return Err(Error::Domain(format!(
                "w_max = {} too small for order {a}",
                grid.w_max
            )));
        }
    }
    let tol = Tolerance::default();
    let mut eig = solve_eigenfunction_on(&source.sample(grid)?, None, tol)?;
    let big = grid.enlarged(1.0, REPORT_BUFFER);
    let wide = solve_eigenfunction_on(&source.sample(&big)?, None, tol)?;
    let change = relative_change(&eig.t1, &wide.t1);
    eig.diagnostics.sweep.push(SweepStep {
        w_max: big.w_max,
        half_width: big.half_width,
        change,
    });
    eig.a_hint = a_hint;
    if change >= SWEEP_TOLERANCE {
        return Err(Error::Domain(format!(
            "truncation sweep changed t₁ by {:.2}%",
            100.0 * change
        )));
    }
    Ok(eig)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracelessHessian {
    pub t: TensorField,
    /// `|T|_g` at every grid point.
    pub norm: Vec<f64>,
    pub fit: DecayFit,
    /// Largest `|g^{ij}T_{ij}|` on the reporting region and the bound it met.
    pub max_trace: f64,
    pub trace_bound: f64,
}

/// Pointwise bound on `|tr T|` at reported points: ten times the solver
/// tolerance plus the rounding of the stencil sums.
fn trace_bound(eig: &RadialEigenfunction, ginv: &TensorField, p: usize) -> f64 {
    let grid = eig.t.grid;
    let d = grid.dim();
    let mut stencil = (grid.n + 1) as f64;
    for a in 0..d {
        stencil += 4.0 * ginv.comps[a * d + a][p].abs() / grid.spacing(a).powi(2);
    }
    let diag = &eig.diagnostics;
    10.0 * diag.tolerance * diag.rhs_norm + 1e-12 * stencil * eig.t.values[p].abs()
}

#[allow(non_snake_case)]
pub fn traceless_hessian_T(
    metric: &ZeroShiftMetric,
    eig: &RadialEigenfunction,
) -> Result<TracelessHessian> {
    traceless_hessian_of(metric, &eig.t, Some(eig))
}

/// `Hess t − t g` for any `t`; the trace bound is enforced only when the
/// solve it came from is given.
pub fn traceless_hessian_of(
    metric: &ZeroShiftMetric,
    t: &ScalarField,
    eig: Option<&RadialEigenfunction>,
) -> Result<TracelessHessian> {
    let grid = metric.grid;
    if t.grid != grid {
        return Err(Error::Data("eigenfunction lives on another grid".into()));
    }
    let d = grid.dim();
    let gamma = christoffel_zero_shift(metric);
    let ginv = metric.inverse();
    let mut tt = hessian_with(&gamma, t);
    for c in 0..d * d {
        for p in 0..grid.len() {
            tt.comps[c][p] -= t.values[p] * metric.g.comps[c][p];
        }
    }
    tt.index_weight = metric.g.index_weight;
    let tr = trace(&ginv, &tt);
    let region = ReportingRegion::of(&grid)?;
    let mut max_trace: f64 = 0.0;
    let mut bound: f64 = 0.0;
    for p in region.points(&grid) {
        max_trace = max_trace.max(tr.values[p].abs());
        if let Some(eig) = eig {
            let b = trace_bound(eig, &ginv, p);
            bound = bound.max(b);
            if tr.values[p].abs() > b {
                return Err(Error::Consistency(format!(
                    "tr T = {:e} exceeds {b:e} at point {p}",
                    tr.values[p]
                )));
            }
        }
    }
    let norm = norm_g(&tt, &ginv);
    let (st, v) = station_sup(&grid, &region, &norm);
    let fit = fit_decay_rate(&st, &v)?;
    Ok(TracelessHessian {
        t: tt,
        norm,
        fit,
        max_trace,
        trace_bound: bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric_zoo::{make_hyperbolic, make_perturbed, make_warped, ModelSpec, WarpProfile};

    fn hyperbolic_grid() -> HalfSpaceGrid {
        HalfSpaceGrid::build(1, 0.0, 10.0, 201, 2.0, 33).unwrap()
    }

    #[test]
    fn hyperbolic_mean_curvature() {
        let grid = HalfSpaceGrid::build(2, 0.0, 6.0, 61, 1.0, 9).unwrap();
        let h = mean_curvature(&make_hyperbolic(&grid));
        assert!(h.values.iter().all(|v| (v - 2.0).abs() < 1e-8));
    }

    #[test]
    fn warped_mean_curvature_converges() {
        let profile = WarpProfile::alh(0.5, 0.5);
        let err = |nw: usize| {
            let grid = HalfSpaceGrid::build(1, 0.0, 4.0, nw, 1.0, 9).unwrap();
            let m = make_warped(&grid, &profile).unwrap();
            let h = mean_curvature(&m.metric);
            (0..grid.len())
                .map(|p| (h.values[p] - m.mean_curvature(grid.point(p)[0])).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(41), err(81));
        assert!((e1 / e2 - 4.0).abs() < 0.5, "{e1} {e2}");
    }

    #[test]
    fn perturbed_mean_curvature_rate() {
        let grid = HalfSpaceGrid::build(1, 0.0, 10.0, 201, 2.0, 33).unwrap();
        let spec = ModelSpec::perturbed(1, 0.5, 0.05, 0.05);
        let h = mean_curvature(&make_perturbed(&grid, &spec).unwrap());
        let dev: Vec<f64> = h.values.iter().map(|v| v - 1.0).collect();
        let region = ReportingRegion::of(&grid).unwrap();
        let (st, v) = station_sup(&grid, &region, &dev);
        assert!(fit_decay_rate(&st, &v).unwrap().rate().unwrap() >= 0.45);
    }

    #[test]
    fn hyperbolic_eigenfunction_is_exponential() {
        let grid = hyperbolic_grid();
        let eig = solve_radial_eigenfunction(&ModelSpec::hyperbolic(1), &grid, None).unwrap();
        let region = ReportingRegion::of(&grid).unwrap();
        for p in region.points(&grid) {
            assert!(eig.t1.values[p].abs() <= 1e-8);
        }
        let th =
            traceless_hessian_T(&ModelSpec::hyperbolic(1).sample(&grid).unwrap(), &eig).unwrap();
        for p in region.points(&grid) {
            assert!(th.norm[p] <= 1e-6);
        }
    }

    fn warped_case(a: f64) -> (RadialEigenfunction, TracelessHessian) {
        let grid = HalfSpaceGrid::build(1, 0.0, 12.0, 241, 2.0, 9).unwrap();
        let spec = ModelSpec::warped(1, a, 0.5);
        let eig = solve_radial_eigenfunction(&spec, &grid, Some(a)).unwrap();
        let th = traceless_hessian_T(&spec.sample(&grid).unwrap(), &eig).unwrap();
        (eig, th)
    }

    #[test]
    fn warped_low_order_grows_at_barrier_rate() {
        let (eig, th) = warped_case(0.5);
        let growth = -eig.t1_fit().unwrap().rate().unwrap();
        assert!((growth - 0.5).abs() <= 0.05, "{growth}");
        assert!(th.fit.rate().unwrap() >= -0.5 - 0.05);
        assert!(eig.diagnostics.sweep[0].change < SWEEP_TOLERANCE);
    }

    #[test]
    fn warped_high_order_decays_at_barrier_rate() {
        let (eig, th) = warped_case(1.5);
        let rate = eig.t1_fit().unwrap().rate().unwrap();
        assert!((rate - 0.5).abs() <= 0.05, "{rate}");
        assert!(th.fit.rate().unwrap() >= 0.5 - 0.05);
    }

    #[test]
    fn warped_t1_matches_leading_asymptotics() {
        // t₁ ≈ −n c e^{(1−a)w}/(n + 2 − a) from the radial ODE.
        let (eig, _) = warped_case(0.5);
        let grid = eig.t.grid;
        let iw = grid.nearest_w(8.0);
        let p = iw * grid.slice_len() + grid.nx / 2;
        let predicted = -0.5 / 2.5 * (0.5 * grid.w(iw)).exp();
        assert!(
            (eig.t1.values[p] / predicted - 1.0).abs() < 0.05,
            "{} vs {predicted}",
            eig.t1.values[p]
        );
    }

    #[test]
    fn perturbed_trace_and_rates() {
        let grid = HalfSpaceGrid::build(1, 0.0, 10.0, 201, 2.0, 33).unwrap();
        let spec = ModelSpec::perturbed(1, 1.5, 0.05, 0.05);
        let eig = solve_radial_eigenfunction(&spec, &grid, Some(1.5)).unwrap();
        let th = traceless_hessian_T(&spec.sample(&grid).unwrap(), &eig).unwrap();
        assert!(th.max_trace <= th.trace_bound);
        assert!(th.fit.rate().unwrap() >= 0.45);
    }

    #[test]
    fn doubling_t_doubles_t() {
        let grid = HalfSpaceGrid::build(1, 0.0, 6.0, 61, 2.0, 17).unwrap();
        let metric = make_perturbed(&grid, &ModelSpec::perturbed(1, 0.5, 0.05, 0.05)).unwrap();
        let eig = solve_eigenfunction_on(&metric, None, Tolerance::default()).unwrap();
        let one = traceless_hessian_of(&metric, &eig.t, None).unwrap();
        let twice = traceless_hessian_of(&metric, &eig.t.map(1.0, |v| 2.0 * v), None).unwrap();
        for (a, b) in one.t.comps.iter().zip(&twice.t.comps) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(2.0 * x, *y);
            }
        }
    }

    #[test]
    fn initial_guess_does_not_matter() {
        let grid = HalfSpaceGrid::build(1, 0.0, 8.0, 161, 2.0, 33).unwrap();
        let metric = make_perturbed(&grid, &ModelSpec::perturbed(1, 0.5, 0.05, 0.05)).unwrap();
        let a = solve_eigenfunction_on(&metric, None, Tolerance::default()).unwrap();
        let guess: Vec<f64> = (0..grid.len()).map(|p| (p % 7) as f64).collect();
        let b = solve_eigenfunction_on(&metric, Some(&guess), Tolerance::default()).unwrap();
        let scale = a.t.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.t.values.iter().zip(&b.t.values) {
            assert!((x - y).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn truncation_changes_shrink() {
        let spec = ModelSpec::perturbed(1, 0.5, 0.05, 0.05);
        let grid = HalfSpaceGrid::build(1, 0.0, 10.0, 201, 2.0, 33).unwrap();
        let solve = |g: &HalfSpaceGrid| {
            solve_eigenfunction_on(&spec.sample(g).unwrap(), None, Tolerance::default()).unwrap()
        };
        let (g1, g2) = (grid.enlarged(1.0, 0.0), grid.enlarged(2.0, 0.0));
        let (s0, s1, s2) = (solve(&grid), solve(&g1), solve(&g2));
        let c1 = relative_change(&s0.t1, &s1.t1);
        let c2 = relative_change(&s0.t1, &s2.t1);
        assert!(c2 - c1 <= c1 + 1e-9, "{c1} {c2}");
    }

    #[test]
    fn short_domain_is_rejected() {
        let grid = HalfSpaceGrid::build(1, 0.0, 6.0, 61, 2.0, 17).unwrap();
        let r =
            solve_radial_eigenfunction(&ModelSpec::perturbed(1, 0.5, 0.05, 0.05), &grid, Some(0.5));
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
