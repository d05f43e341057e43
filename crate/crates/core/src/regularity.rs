//! The compactified metric `ḡ = t⁻²g` in coordinates `(ρ = 1/t, y)`, Hölder
//! exponents measured from dyadic moduli of continuity, the battery of
//! component decay rates and the exponent bootstrap limit.
//!
//! Components of `ḡ` and of its Christoffel symbols are computed at the
//! points of the half-space grid and then resampled along each grid column
//! onto a uniform `ρ` lattice. Columns keep their grid label `x`; the frame
//! is the coordinate frame of `(ρ, y)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ScalarField, Symmetry, TensorField};
use crate::grid::{HalfSpaceGrid, ReportingRegion};
use crate::tensor_core::{
    christoffel_zero_shift, conformal_hessian_with, inner_gradient, norm_g, ZeroShiftMetric,
};
use crate::window_norms::{fit_decay_rate, station_sup, tangential_lp_norm, DecayFit, WindowSpec};

/// Dyadic levels of the uniform `ρ` lattice: `2^LEVELS + 1` nodes.
pub const LEVELS: u32 = 10;

/// Tolerated shortfall of a measured rate below its prediction.
pub const BATTERY_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartSource {
    /// Grid coordinates `x^μ`.
    Fermi,
    /// Harmonic coordinates supplied by the caller.
    Harmonic,
}

/// Fields sampled on a uniform `ρ` lattice, one column per grid column of
/// the reporting region.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoLattice {
    pub n: usize,
    /// Uniform nodes, increasing.
    pub rho: Vec<f64>,
    /// Columns per tangential axis; column `(i_1, …, i_n)` has index `Σ i_a m^{a−1}`.
    pub columns_per_axis: usize,
    /// Tangential spacing between neighbouring columns.
    pub dx: f64,
    /// `comps[c][col * rho.len() + j]`.
    pub comps: Vec<Vec<f64>>,
}

impl RhoLattice {
    pub fn columns(&self) -> usize {
        self.columns_per_axis.pow(self.n as u32)
    }

    pub fn at(&self, c: usize, col: usize, j: usize) -> f64 {
        self.comps[c][col * self.rho.len() + j]
    }
}

#[derive(Debug, Clone)]
pub struct CompactifiedMetric {
    pub grid: HalfSpaceGrid,
    pub charts: ChartSource,
    /// `ρ = 1/t` at the grid points.
    pub rho: ScalarField,
    /// `ḡ_{ab}` in the `(ρ, y)` frame at the grid points.
    pub gbar: TensorField,
    /// `Γ̄^c_{ab}` in the `(ρ, y)` frame at the grid points.
    pub christoffel: TensorField,
    pub gbar_lattice: RhoLattice,
    pub christoffel_lattice: RhoLattice,
}

/// Coordinate functions `(ρ, y¹, …, yⁿ)` and `log t`.
fn coordinates(
    t: &ScalarField,
    charts: Option<&[ScalarField]>,
) -> Result<(Vec<ScalarField>, ScalarField)> {
    let grid = t.grid;
    if let Some(p) = t.values.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Domain(format!(
            "t = {} is not positive at point {p}",
            t.values[p]
        )));
    }
    let mut ys = vec![t.map(-t.weight, |v| 1.0 / v)];
    match charts {
        Some(cs) => {
            if cs.len() != grid.n || cs.iter().any(|c| c.grid != grid) {
                return Err(Error::Data(format!(
                    "expected {} chart functions on the grid of t",
                    grid.n
                )));
            }
            ys.extend(cs.iter().cloned());
        }
        None => ys.extend((1..=grid.n).map(|a| ScalarField::from_fn(grid, 0.0, move |c| c[a]))),
    }
    Ok((ys, t.map(0.0, f64::ln)))
}

/// Check that `t` increases along `w` on every reported column.
fn check_monotone(t: &ScalarField, region: &ReportingRegion) -> Result<()> {
    let grid = t.grid;
    let (lo, hi) = (grid.nearest_w(region.w_lo), grid.nearest_w(region.w_hi));
    for p in region.row_points(&grid, lo) {
        let col = p % grid.slice_len();
        for iw in lo..hi {
            let (a, b) = (
                t.values[iw * grid.slice_len() + col],
                t.values[(iw + 1) * grid.slice_len() + col],
            );
            if !(b > a) {
                return Err(Error::Domain(format!(
                    "t is not increasing along w on column {col} at w = {}",
                    grid.w(iw)
                )));
            }
        }
    }
    Ok(())
}

/// Matrix `∂_iY^a` at a point.
fn jacobian(dy: &[Vec<Vec<f64>>], p: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |a, i| dy[a][i][p])
}

/// Build `ḡ = t⁻²g` and its Christoffel symbols in `(ρ, y)` coordinates.
/// Without charts the grid coordinates `x^μ` serve as `y^μ`.
pub fn compactify(
    metric: &ZeroShiftMetric,
    t: &ScalarField,
    charts: Option<&[ScalarField]>,
) -> Result<CompactifiedMetric> {
    let grid = metric.grid;
    if t.grid != grid {
        return Err(Error::Data("t must live on the metric grid".into()));
    }
    let region = ReportingRegion::of(&grid)?;
    let (ys, logt) = coordinates(t, charts)?;
    check_monotone(t, &region)?;
    let d = grid.dim();
    let ginv = metric.inverse();
    let gamma = christoffel_zero_shift(metric);
    let dy: Vec<Vec<Vec<f64>>> = ys
        .iter()
        .map(|y| (0..d).map(|i| y.d(i)).collect())
        .collect();

    let mut gbar = TensorField::covariant(grid, 2, 0.0);
    gbar.index_weight = 0.0;
    for a in 0..d {
        for b in a..d {
            let ip = inner_gradient(&ginv, &dy[a], &dy[b]);
            let vals: Vec<f64> = ip
                .iter()
                .zip(&t.values)
                .map(|(v, tt)| tt * tt * v)
                .collect();
            gbar.comps[a * d + b] = vals.clone();
            gbar.comps[b * d + a] = vals;
        }
    }
    for p in 0..grid.len() {
        let inv = matrix(&gbar, p).try_inverse().ok_or_else(|| {
            Error::Domain(format!("coordinate differentials degenerate at point {p}"))
        })?;
        for c in 0..d * d {
            gbar.comps[c][p] = inv[(c / d, c % d)];
        }
    }
    let gbar = gbar.with_symmetry(Symmetry::Symmetric(0, 1));

    // Γ̄^c_{ab} = −J^i_a J^j_b Hess̄_{ij}(Y^c) with J the inverse Jacobian.
    let hess: Vec<TensorField> = ys
        .iter()
        .map(|y| conformal_hessian_with(&metric.g, &ginv, &gamma, &logt, y))
        .collect();
    let mut christoffel = TensorField::zeros(
        grid,
        vec![crate::Slot::Upper, crate::Slot::Lower, crate::Slot::Lower],
        0.0,
    );
    christoffel.index_weight = 0.0;
    for p in 0..grid.len() {
        let j = jacobian(&dy, p, d)
            .try_inverse()
            .ok_or_else(|| Error::Domain(format!("coordinate Jacobian singular at point {p}")))?;
        for c in 0..d {
            let h = matrix(&hess[c], p);
            let m = j.transpose() * h * &j;
            for a in 0..d {
                for b in 0..d {
                    christoffel.comps[(c * d + a) * d + b][p] = -m[(a, b)];
                }
            }
        }
    }
    let christoffel = christoffel.with_symmetry(Symmetry::Symmetric(1, 2));
    let rho = ys[0].clone();
    let gbar_lattice = resample(&gbar, &rho, &region)?;
    let christoffel_lattice = resample(&christoffel, &rho, &region)?;
    Ok(CompactifiedMetric {
        grid,
        charts: if charts.is_some() {
            ChartSource::Harmonic
        } else {
            ChartSource::Fermi
        },
        rho,
        gbar,
        christoffel,
        gbar_lattice,
        christoffel_lattice,
    })
}

fn matrix(t: &TensorField, p: usize) -> DMatrix<f64> {
    let d = t.dim();
    DMatrix::from_fn(d, d, |a, b| t.comps[a * d + b][p])
}

/// Monotone piecewise-cubic Hermite interpolation (Fritsch–Carlson) of
/// `(xs, ys)` with `xs` strictly increasing.
pub fn pchip(xs: &[f64], ys: &[f64], xq: &[f64]) -> Vec<f64> {
    let m = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..m - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    let mut slope = vec![0.0; m];
    if m == 2 {
        slope = vec![delta[0]; 2];
    } else {
        for i in 1..m - 1 {
            if delta[i - 1] * delta[i] > 0.0 {
                let (w1, w2) = (2.0 * h[i] + h[i - 1], h[i] + 2.0 * h[i - 1]);
                slope[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
            let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if s * d0 <= 0.0 {
                0.0
            } else if d0 * d1 < 0.0 && s.abs() > 3.0 * d0.abs() {
                3.0 * d0
            } else {
                s
            }
        };
        slope[0] = end(h[0], h[1], delta[0], delta[1]);
        slope[m - 1] = end(h[m - 2], h[m - 3], delta[m - 2], delta[m - 3]);
    }
    xq.iter()
        .map(|&x| {
            let i = match xs.partition_point(|&v| v <= x) {
                0 => 0,
                k => (k - 1).min(m - 2),
            };
            let s = (x - xs[i]) / h[i];
            let (s2, s3) = (s * s, s * s * s);
            (2.0 * s3 - 3.0 * s2 + 1.0) * ys[i]
                + (s3 - 2.0 * s2 + s) * h[i] * slope[i]
                + (-2.0 * s3 + 3.0 * s2) * ys[i + 1]
                + (s3 - s2) * h[i] * slope[i + 1]
        })
        .collect()
}

/// Resample every component along the reported columns onto the uniform
/// lattice spanning the `ρ` range common to all of them.
fn resample(
    field: &TensorField,
    rho: &ScalarField,
    region: &ReportingRegion,
) -> Result<RhoLattice> {
    let grid = field.grid;
    let sl = grid.slice_len();
    let (lo, hi) = (grid.nearest_w(region.w_lo), grid.nearest_w(region.w_hi));
    let cols: Vec<usize> = region
        .row_points(&grid, lo)
        .into_iter()
        .map(|p| p % sl)
        .collect();
    let per_axis = (cols.len() as f64).powf(1.0 / grid.n as f64).round() as usize;
    let rho_min = cols
        .iter()
        .map(|&c| rho.values[hi * sl + c])
        .fold(f64::MIN, f64::max);
    let rho_max = cols
        .iter()
        .map(|&c| rho.values[lo * sl + c])
        .fold(f64::MAX, f64::min);
    if !(rho_max > rho_min) {
        return Err(Error::Range("columns share no ρ interval".into()));
    }
    let count = (1usize << LEVELS) + 1;
    let nodes: Vec<f64> = (0..count)
        .map(|j| rho_min + (rho_max - rho_min) * j as f64 / (count - 1) as f64)
        .collect();
    let mut comps = vec![Vec::with_capacity(cols.len() * count); field.comps.len()];
    for &col in &cols {
        // ρ decreases with w, so walk the column downwards.
        let xs: Vec<f64> = (lo..=hi)
            .rev()
            .map(|iw| rho.values[iw * sl + col])
            .collect();
        for (c, out) in comps.iter_mut().enumerate() {
            let ys: Vec<f64> = (lo..=hi)
                .rev()
                .map(|iw| field.comps[c][iw * sl + col])
                .collect();
            out.extend(pchip(&xs, &ys, &nodes));
        }
    }
    Ok(RhoLattice {
        n: grid.n,
        rho: nodes,
        columns_per_axis: per_axis,
        dx: grid.dx(),
        comps,
    })
}

/// Log-log fit of one direction class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFit {
    /// `(separation, modulus)` per dyadic scale.
    pub moduli: Vec<(f64, f64)>,
    /// `None` when every modulus is rounding-sized.
    pub slope: Option<f64>,
    pub max_residual: f64,
}

/// Moduli at or below this fraction of the field's magnitude count as rounding.
pub const FLAT_MODULUS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    /// `min(raw, cap)`.
    pub exponent: f64,
    /// Smallest class slope before capping; `None` for a field constant up
    /// to rounding.
    pub raw: Option<f64>,
    pub cap: f64,
    pub saturated: bool,
    pub radial: ClassFit,
    /// Present when the lattice has at least three usable tangential scales.
    pub tangential: Option<ClassFit>,
}

fn log_log_fit(moduli: Vec<(f64, f64)>, scale: f64) -> Result<ClassFit> {
    if moduli.iter().all(|(_, m)| *m <= FLAT_MODULUS * scale) {
        return Ok(ClassFit {
            moduli,
            slope: None,
            max_residual: 0.0,
        });
    }
    if let Some(&(s, _)) = moduli.iter().find(|(_, m)| !(*m > 0.0)) {
        return Err(Error::Data(format!("modulus vanishes at separation {s:e}")));
    }
    let pts: Vec<(f64, f64)> = moduli.iter().map(|&(s, m)| (s.ln(), m.ln())).collect();
    let k = pts.len() as f64;
    let xb = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let yb = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xb).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - xb) * (p.1 - yb)).sum();
    let slope = sxy / sxx;
    let max_residual = pts
        .iter()
        .map(|p| (p.1 - yb - slope * (p.0 - xb)).abs())
        .fold(0.0, f64::max);
    Ok(ClassFit {
        moduli,
        slope: Some(slope),
        max_residual,
    })
}

/// Hölder exponent of all components of a lattice field. Radial moduli use
/// separations `2^{−j}` of the `ρ` range for `j = 2..LEVELS−2`; tangential
/// moduli use dyadic column separations up to a quarter of the columns.
pub fn holder_exponent(field: &RhoLattice) -> Result<HolderEstimate> {
    let nr = field.rho.len();
    let levels = (nr.saturating_sub(1) as f64).log2();
    if nr < 2 || levels.fract() != 0.0 {
        return Err(Error::Data(format!("{nr} lattice nodes is not 2^J + 1")));
    }
    let levels = levels as u32;
    if levels < 8 {
        return Err(Error::Range(format!(
            "{} radial scales, need at least 5",
            levels.saturating_sub(3)
        )));
    }
    if field.comps.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("lattice field is not finite".into()));
    }
    let span = field.rho[nr - 1] - field.rho[0];
    let scale = field
        .comps
        .iter()
        .flatten()
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let cols = field.columns();
    let radial: Vec<(f64, f64)> = (2..=levels - 2)
        .map(|j| {
            let k = 1usize << (levels - j);
            let mut m: f64 = 0.0;
            for comp in &field.comps {
                for col in 0..cols {
                    let line = &comp[col * nr..(col + 1) * nr];
                    for i in 0..nr - k {
                        m = m.max((line[i + k] - line[i]).abs());
                    }
                }
            }
            (span * k as f64 / (nr - 1) as f64, m)
        })
        .collect();
    let radial = log_log_fit(radial, scale)?;

    let mc = field.columns_per_axis;
    let mut seps = Vec::new();
    let mut k = 1;
    while 4 * k < mc {
        seps.push(k);
        k *= 2;
    }
    let tangential = if seps.len() >= 3 {
        let moduli = seps
            .iter()
            .rev()
            .map(|&k| {
                let mut m: f64 = 0.0;
                for axis in 0..field.n {
                    let stride = mc.pow(axis as u32);
                    for col in 0..cols {
                        if (col / stride) % mc + k >= mc {
                            continue;
                        }
                        let other = col + k * stride;
                        for comp in &field.comps {
                            for j in 0..nr {
                                m = m.max((comp[other * nr + j] - comp[col * nr + j]).abs());
                            }
                        }
                    }
                }
                (field.dx * k as f64, m)
            })
            .collect();
        Some(log_log_fit(moduli, scale)?)
    } else {
        None
    };
    let raw = radial
        .slope
        .into_iter()
        .chain(tangential.as_ref().and_then(|t| t.slope))
        .reduce(f64::min);
    let cap = 1.0 - 2.0 / levels as f64;
    Ok(HolderEstimate {
        exponent: raw.map_or(cap, |r| r.clamp(0.0, cap)),
        raw,
        cap,
        saturated: raw.is_none_or(|r| r >= cap),
        radial,
        tangential,
    })
}

/// One measured decay estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryRow {
    pub estimate_id: String,
    pub paper_ref: String,
    pub predicted_rate: f64,
    /// `None` when every value sits below the fit floor, or the fit failed.
    pub measured_rate: Option<f64>,
    pub margin: Option<f64>,
    pub pass: bool,
    /// Cause of a failed fit.
    pub failure: Option<String>,
}

impl BatteryRow {
    fn from_fit(id: &str, key: &str, predicted: f64, fit: Result<DecayFit>) -> Self {
        let mut row = BatteryRow {
            estimate_id: id.into(),
            paper_ref: key.into(),
            predicted_rate: predicted,
            measured_rate: None,
            margin: None,
            pass: false,
            failure: None,
        };
        match fit {
            Ok(f) => match f.rate() {
                Some(r) => {
                    row.measured_rate = Some(r);
                    row.margin = Some(r - predicted);
                    row.pass = r >= predicted - BATTERY_MARGIN;
                }
                None => row.pass = true,
            },
            Err(e) => row.failure = Some(e.to_string()),
        }
        row
    }
}

/// `∇_iH_{jk} = ∂_iH_{jk} − Γ^l_{ij}H_{lk} − Γ^l_{ik}H_{jl}`.
fn covariant_derivative(h: &TensorField, gamma: &TensorField) -> TensorField {
    let grid = h.grid;
    let d = grid.dim();
    let mut out = TensorField::covariant(grid, 3, h.weight);
    for j in 0..d {
        for k in 0..d {
            for i in 0..d {
                let dh = h.d_comp(&[j, k], i);
                out.comps[(i * d + j) * d + k] = (0..grid.len())
                    .map(|p| {
                        let mut v = dh[p];
                        for l in 0..d {
                            v -= gamma.comps[(l * d + i) * d + j][p] * h.comps[l * d + k][p]
                                + gamma.comps[(l * d + i) * d + k][p] * h.comps[j * d + l][p];
                        }
                        v
                    })
                    .collect();
            }
        }
    }
    out
}

/// Christoffel symbols of `ḡ = t⁻²g` in the grid coordinates:
/// `Γ − δ^k_i ∂_j log t − δ^k_j ∂_i log t + g_{ij}∇^k log t`.
fn conformal_christoffel(
    g: &TensorField,
    ginv: &TensorField,
    gamma: &TensorField,
    logt: &ScalarField,
) -> TensorField {
    let grid = g.grid;
    let d = grid.dim();
    let ds: Vec<Vec<f64>> = (0..d).map(|a| logt.d(a)).collect();
    let mut out = gamma.clone();
    for p in 0..grid.len() {
        let up: Vec<f64> = (0..d)
            .map(|k| (0..d).map(|l| ginv.comps[k * d + l][p] * ds[l][p]).sum())
            .collect();
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let mut v = g.comps[i * d + j][p] * up[k];
                    if k == i {
                        v -= ds[j][p];
                    }
                    if k == j {
                        v -= ds[i][p];
                    }
                    out.comps[(k * d + i) * d + j][p] += v;
                }
            }
        }
    }
    out
}

/// `∂_ρ` of a field along each column by second-order differences on the
/// non-uniform `ρ` nodes; zero on the first and last row.
fn rho_derivative(v: &[f64], rho: &[f64], grid: &HalfSpaceGrid) -> Vec<f64> {
    let sl = grid.slice_len();
    let mut out = vec![0.0; v.len()];
    for iw in 1..grid.nw - 1 {
        for col in 0..sl {
            let (a, b, c) = ((iw - 1) * sl + col, iw * sl + col, (iw + 1) * sl + col);
            let (h1, h2) = (rho[b] - rho[a], rho[c] - rho[b]);
            out[b] = -h2 / (h1 * (h1 + h2)) * v[a]
                + (h2 - h1) / (h1 * h2) * v[b]
                + h1 / (h2 * (h1 + h2)) * v[c];
        }
    }
    out
}

fn fit_sup(grid: &HalfSpaceGrid, region: &ReportingRegion, values: &[f64]) -> Result<DecayFit> {
    let (st, v) = station_sup(grid, region, values);
    fit_decay_rate(&st, &v)
}

/// Exponent of the tangential window norm used for the first-order row.
pub fn default_p(n: usize) -> f64 {
    2.0 * (n as f64 + 2.0)
}

/// Rounding in `w`-derivatives is amplified by `∂w/∂ρ = −t`; values of
/// `ρ`-derivative rows below `RHO_NOISE·t` are treated as zero.
pub const RHO_NOISE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    /// Exponent of the tangential window norm.
    pub p: f64,
    /// Radius of the windows centred on `x = 0` at each station.
    pub window_radius: f64,
}

impl BatteryParams {
    pub fn standard(n: usize) -> Self {
        BatteryParams {
            p: default_p(n),
            window_radius: 0.5,
        }
    }
}

fn drop_rho_noise(values: &mut [f64], t: &ScalarField) {
    for (v, tt) in values.iter_mut().zip(&t.values) {
        if v.abs() <= RHO_NOISE * tt {
            *v = 0.0;
        }
    }
}

/// Predicted rate of the tangential block of `Hess̄(y^μ)`.
pub fn tangential_hessian_rate(a: f64) -> f64 {
    if a < 1.0 {
        a + 1.0
    } else {
        2.0
    }
}

/// Measured decay rates of the metric components, the derivatives of `ρ`
/// and `y^μ` and their Hessians against the rates predicted for order `a`.
/// Norms are taken with `g`, radial rates along `w`.
pub fn component_order_battery(
    metric: &ZeroShiftMetric,
    t: &ScalarField,
    charts: Option<&[ScalarField]>,
    a: f64,
) -> Result<Vec<BatteryRow>> {
    component_order_battery_with(metric, t, charts, a, BatteryParams::standard(metric.grid.n))
}

pub fn component_order_battery_with(
    metric: &ZeroShiftMetric,
    t: &ScalarField,
    charts: Option<&[ScalarField]>,
    a: f64,
    params: BatteryParams,
) -> Result<Vec<BatteryRow>> {
    let comp = compactify(metric, t, charts)?;
    let grid = metric.grid;
    let region = ReportingRegion::of(&grid)?;
    let d = grid.dim();
    let n = grid.n;
    let np = grid.len();
    let (ys, logt) = coordinates(t, charts)?;
    let ginv = metric.inverse();
    let gamma = christoffel_zero_shift(metric);
    let dlogt: Vec<Vec<f64>> = (0..d).map(|i| logt.d(i)).collect();
    let dy: Vec<Vec<Vec<f64>>> = ys
        .iter()
        .map(|y| (0..d).map(|i| y.d(i)).collect())
        .collect();
    let g00 = inner_gradient(&ginv, &dlogt, &dlogt);
    let lapse = ScalarField::new(grid, g00.iter().map(|v| 1.0 / v.sqrt()).collect(), 0.0)?;
    let mut rows = Vec::new();
    let fit = |v: &[f64]| fit_sup(&grid, &region, v);

    rows.push(BatteryRow::from_fit(
        "lapse",
        "lapse-bound",
        a,
        fit(&lapse.values.iter().map(|v| v - 1.0).collect::<Vec<_>>()),
    ));

    let drho_dw = comp.rho.d(0);
    let dn: Vec<Vec<f64>> = (0..d).map(|i| lapse.d(i)).collect();
    let mut lapse_deriv: Vec<f64> = (0..np)
        .map(|p| {
            let radial = (dn[0][p] / drho_dw[p]).abs();
            (1..d).map(|m| dn[m][p].abs()).fold(radial, f64::max)
        })
        .collect();
    drop_rho_noise(&mut lapse_deriv, t);
    rows.push(BatteryRow::from_fit(
        "lapse-derivatives",
        "lapse-derivative-bound",
        a - 1.0,
        fit(&lapse_deriv),
    ));

    let mut dw_gbar = vec![0.0f64; np];
    let mut drho_gbar = vec![0.0f64; np];
    for mu in 1..d {
        for nu in mu..d {
            let c = comp.gbar.comp(&[mu, nu]);
            let dw = comp.gbar.d_comp(&[mu, nu], 0);
            let dr = rho_derivative(c, &comp.rho.values, &grid);
            for p in 0..np {
                dw_gbar[p] = dw_gbar[p].max(dw[p].abs());
                drho_gbar[p] = drho_gbar[p].max(dr[p].abs());
            }
        }
    }
    drop_rho_noise(&mut drho_gbar, t);
    rows.push(BatteryRow::from_fit(
        "metric-normal-w",
        "normal-derivative-bound",
        a,
        fit(&dw_gbar),
    ));
    rows.push(BatteryRow::from_fit(
        "metric-normal-rho",
        "normal-derivative-bound",
        a - 1.0,
        fit(&drho_gbar),
    ));

    let mut dg = TensorField::covariant(grid, 3, 0.0);
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                dg.comps[(i * d + j) * d + k] = comp.gbar.d_comp(&[j, k], i);
            }
        }
    }
    let x0 = vec![0.0; n];
    let tangential: Result<Vec<f64>> = region
        .stations()
        .iter()
        .map(|&w| {
            tangential_lp_norm(
                &dg,
                &WindowSpec::new(w, &x0, params.window_radius)?,
                params.p,
            )
        })
        .collect();
    let fit_tan = tangential.and_then(|v| fit_decay_rate(&region.stations(), &v));
    rows.push(BatteryRow::from_fit(
        "metric-tangential-derivatives",
        "tangential-first-order",
        2.0 + a,
        fit_tan,
    ));

    rows.push(BatteryRow::from_fit(
        "inverse-radial",
        "inverse-metric-components",
        a,
        fit(&g00.iter().map(|v| v - 1.0).collect::<Vec<_>>()),
    ));
    let mut mixed = vec![0.0f64; np];
    for y in &dy[1..] {
        let ip = inner_gradient(&ginv, &dlogt, y);
        mixed
            .iter_mut()
            .zip(ip)
            .for_each(|(m, v)| *m = m.max(v.abs()));
    }
    rows.push(BatteryRow::from_fit(
        "inverse-mixed",
        "inverse-metric-components",
        a + 1.0,
        fit(&mixed),
    ));
    let sandwich: Vec<f64> = (0..np)
        .map(|p| {
            let m = DMatrix::from_fn(n, n, |u, v| {
                let gi: f64 = (0..d * d)
                    .map(|c| ginv.comps[c][p] * dy[u + 1][c / d][p] * dy[v + 1][c % d][p])
                    .sum();
                t.values[p] * t.values[p] * gi
            });
            let eig = m.symmetric_eigenvalues();
            let (lo, hi) = (eig.min(), eig.max());
            hi.max(1.0 / lo)
        })
        .collect();
    rows.push(BatteryRow::from_fit(
        "inverse-tangential-sandwich",
        "inverse-metric-components",
        0.0,
        fit(&sandwich),
    ));

    let drho: Vec<Vec<f64>> = (0..d).map(|i| comp.rho.d(i)).collect();
    let grad_rho: Vec<f64> = inner_gradient(&ginv, &drho, &drho)
        .iter()
        .zip(&t.values)
        .map(|(v, tt)| tt * tt * v - 1.0)
        .collect();
    rows.push(BatteryRow::from_fit(
        "rho-gradient",
        "rho-derivatives",
        a,
        fit(&grad_rho),
    ));
    let gamma_bar = conformal_christoffel(&metric.g, &ginv, &gamma, &logt);
    let hess_rho = conformal_hessian_with(&metric.g, &ginv, &gamma, &logt, &comp.rho);
    rows.push(BatteryRow::from_fit(
        "rho-hessian",
        "rho-derivatives",
        1.0 + a,
        fit(&norm_g(&hess_rho, &ginv)),
    ));
    let nabla_hess_rho = covariant_derivative(&hess_rho, &gamma_bar);
    rows.push(BatteryRow::from_fit(
        "rho-third-derivatives",
        "rho-derivatives",
        a + 1.0,
        fit(&norm_g(&nabla_hess_rho, &ginv)),
    ));

    // Frame of the coordinates (log t, y): columns of the inverse Jacobian.
    let mut frame = Vec::with_capacity(np);
    for p in 0..np {
        let jac = DMatrix::from_fn(d, d, |r, i| if r == 0 { dlogt[i][p] } else { dy[r][i][p] });
        frame.push(
            jac.try_inverse()
                .ok_or_else(|| Error::Domain(format!("chart Jacobian singular at point {p}")))?,
        );
    }
    let (mut radial, mut mixed, mut tang, mut third) = (
        vec![0.0f64; np],
        vec![0.0f64; np],
        vec![0.0f64; np],
        vec![0.0f64; np],
    );
    for y in &ys[1..] {
        let h = conformal_hessian_with(&metric.g, &ginv, &gamma, &logt, y);
        let third_norm = norm_g(&covariant_derivative(&h, &gamma_bar), &ginv);
        for p in 0..np {
            let m = frame[p].transpose() * matrix(&h, p) * &frame[p];
            radial[p] = radial[p].max(m[(0, 0)].abs());
            for al in 1..d {
                mixed[p] = mixed[p].max(m[(0, al)].abs());
            }
            let block: f64 = (1..d)
                .flat_map(|u| (1..d).map(move |v| (u, v)))
                .map(|(u, v)| m[(u, v)].powi(2))
                .sum();
            tang[p] = tang[p].max(block.sqrt() / (t.values[p] * t.values[p]));
            third[p] = third[p].max(third_norm[p]);
        }
    }
    rows.push(BatteryRow::from_fit(
        "y-hessian-radial",
        "y-hessian",
        a + 1.0,
        fit(&radial),
    ));
    rows.push(BatteryRow::from_fit(
        "y-hessian-mixed",
        "y-hessian",
        a,
        fit(&mixed),
    ));
    rows.push(BatteryRow::from_fit(
        "y-hessian-tangential",
        "y-hessian",
        tangential_hessian_rate(a),
        fit(&tang),
    ));
    rows.push(BatteryRow::from_fit(
        "y-third-derivatives",
        "y-hessian-derivative",
        a + 1.0,
        fit(&third),
    ));
    Ok(rows)
}

/// `rate(∂_wḡ) − rate(∂_ρḡ) − 1`, which vanishes up to fit noise.
pub fn normal_derivative_consistency(rows: &[BatteryRow]) -> Option<f64> {
    let rate = |id: &str| {
        rows.iter()
            .find(|r| r.estimate_id == id)
            .and_then(|r| r.measured_rate)
    };
    Some(rate("metric-normal-w")? - rate("metric-normal-rho")? - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapLimit {
    pub sequence: Vec<f64>,
    /// Last iterate.
    pub limit: f64,
    /// Smaller root of `b² − ab + (a − 1 − n/q) = 0`.
    pub root: f64,
    /// `(a − √((2−a)² + n/q))/2`, which differs from `root` when `n/q > 0`.
    pub alternative: f64,
}

/// Iterate `b′ = (a − 1 − n/q)/(a − b)` from `b₀ = 0` until successive
/// iterates differ by less than `1e−12`.
pub fn bootstrap_exponent_limit(a: f64, n: usize, q: f64) -> Result<BootstrapLimit> {
    let nq = n as f64 / q;
    if !(a > 1.0 && a < 2.0) {
        return Err(Error::Domain(format!("a = {a} must lie in (1, 2)")));
    }
    if !(q > 0.0 && a - 1.0 - nq > 0.0) {
        return Err(Error::Domain(format!(
            "q = {q} must exceed n/(a − 1) = {}",
            n as f64 / (a - 1.0)
        )));
    }
    let c = a - 1.0 - nq;
    let mut seq = vec![0.0];
    loop {
        let b = *seq.last().unwrap();
        let next = c / (a - b);
        seq.push(next);
        if (next - b).abs() < 1e-12 {
            break;
        }
        if seq.len() > 100_000 {
            return Err(Error::Solver("bootstrap recurrence did not settle".into()));
        }
    }
    Ok(BootstrapLimit {
        limit: *seq.last().unwrap(),
        sequence: seq,
        root: (a - ((a - 2.0).powi(2) + 4.0 * nq).sqrt()) / 2.0,
        alternative: (a - ((2.0 - a).powi(2) + nq).sqrt()) / 2.0,
    })
}
