//! Norms over moving windows of the model metric `h = dw² + e^{2w}δ`, the two
//! window integration inequalities, a Gronwall envelope and decay-rate fits.
//!
//! The window `Ω_{w,x}(r) = {|w′−w| < r, |y−x| < r e^{−w}}` shrinks below the
//! grid spacing for large `w`, so integrals run in scaled coordinates
//! `w′ = w + r s`, `y = x + r e^{−w} z` with a midpoint rule in `(s, z)`
//! (polar in `z` when `n = 2`) and fields are interpolated multilinearly.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd;
use crate::field::{ScalarField, Slot, TensorField};
use crate::grid::{HalfSpaceGrid, ReportingRegion};

/// Values at or below this are treated as zero by the decay fits.
pub const FIT_FLOOR: f64 = 1e-12;

/// Relative slack granted to inequality checks for quadrature error.
pub const QUADRATURE_TOLERANCE: f64 = 0.05;

/// Relative size of rounding noise tolerated when one side of an inequality vanishes.
const ROUNDING_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FitOutcome {
    Fitted {
        rate: f64,
        log_constant: f64,
        max_residual: f64,
        rms_residual: f64,
    },
    /// Every value is at or below [`FIT_FLOOR`].
    IdenticallySmall,
}

/// Least-squares fit of `log v ≈ log C − rate·w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub stations: Vec<f64>,
    pub values: Vec<f64>,
    pub used: usize,
    pub outcome: FitOutcome,
}

impl DecayFit {
    pub fn rate(&self) -> Option<f64> {
        match self.outcome {
            FitOutcome::Fitted { rate, .. } => Some(rate),
            FitOutcome::IdenticallySmall => None,
        }
    }

    pub fn log_constant(&self) -> Option<f64> {
        match self.outcome {
            FitOutcome::Fitted { log_constant, .. } => Some(log_constant),
            FitOutcome::IdenticallySmall => None,
        }
    }

    pub fn is_small(&self) -> bool {
        self.outcome == FitOutcome::IdenticallySmall
    }
}

pub fn fit_decay_rate(stations: &[f64], values: &[f64]) -> Result<DecayFit> {
    if stations.len() != values.len() {
        return Err(Error::Data(format!(
            "{} stations but {} values",
            stations.len(),
            values.len()
        )));
    }
    if stations.len() < 4 {
        return Err(Error::Range(format!(
            "{} stations, need at least 4",
            stations.len()
        )));
    }
    if let Some(i) = values
        .iter()
        .position(|v| !v.is_finite() || *v < -FIT_FLOOR)
    {
        return Err(Error::Data(format!(
            "value {} at station {} is not a nonnegative number",
            values[i], stations[i]
        )));
    }
    let base = DecayFit {
        stations: stations.to_vec(),
        values: values.to_vec(),
        used: 0,
        outcome: FitOutcome::IdenticallySmall,
    };
    let pts: Vec<(f64, f64)> = stations
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > FIT_FLOOR)
        .map(|(&w, &v)| (w, v.ln()))
        .collect();
    if pts.is_empty() {
        return Ok(base);
    }
    if pts.len() < 4 {
        return Err(Error::Range(format!(
            "only {} stations above the floor {FIT_FLOOR:e}",
            pts.len()
        )));
    }
    let m = pts.len() as f64;
    let wbar = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let lbar = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sww: f64 = pts.iter().map(|p| (p.0 - wbar).powi(2)).sum();
    let swl: f64 = pts.iter().map(|p| (p.0 - wbar) * (p.1 - lbar)).sum();
    let slope = swl / sww;
    let intercept = lbar - slope * wbar;
    let res: Vec<f64> = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).abs())
        .collect();
    let max_residual = res.iter().copied().fold(0.0, f64::max);
    let rms_residual = (res.iter().map(|r| r * r).sum::<f64>() / m).sqrt();
    Ok(DecayFit {
        used: pts.len(),
        outcome: FitOutcome::Fitted {
            rate: -slope,
            log_constant: intercept,
            max_residual,
            rms_residual,
        },
        ..base
    })
}

/// Sup of `|values|` over the reporting part of the grid row nearest each station.
pub fn station_sup(
    grid: &HalfSpaceGrid,
    region: &ReportingRegion,
    values: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let stations = region.stations();
    let sups = stations
        .iter()
        .map(|&w| {
            region
                .row_points(grid, grid.nearest_w(w))
                .into_iter()
                .map(|p| values[p].abs())
                .fold(0.0, f64::max)
        })
        .collect();
    (stations, sups)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub w: f64,
    pub x: [f64; 3],
    pub r: f64,
}

impl WindowSpec {
    pub fn new(w: f64, x: &[f64], r: f64) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::Precondition(format!(
                "window radius {r} must be positive"
            )));
        }
        let mut xx = [0.0; 3];
        xx[..x.len()].copy_from_slice(x);
        Ok(WindowSpec { w, x: xx, r })
    }

    /// Fails unless the window sits at least one grid cell inside the box.
    pub fn check_inside(&self, grid: &HalfSpaceGrid) -> Result<()> {
        let lo = grid.w0 + grid.dw();
        let hi = grid.w_max - grid.dw();
        let reach = self.r * (-self.w).exp();
        let lateral = self.x[..grid.n]
            .iter()
            .all(|x| x.abs() + reach <= grid.half_width - grid.dx());
        if self.w - self.r < lo - 1e-12 || self.w + self.r > hi + 1e-12 || !lateral {
            return Err(Error::Domain(format!(
                "window at w = {}, r = {} leaves the grid",
                self.w, self.r
            )));
        }
        Ok(())
    }

    /// `vol_h(Ω) = ω_n rⁿ · 2 sinh(n r)/n`, independent of the center.
    pub fn volume(&self, n: usize) -> f64 {
        let omega = match n {
            1 => 2.0,
            2 => PI,
            _ => 4.0 * PI / 3.0,
        };
        let nf = n as f64;
        omega * self.r.powf(nf) * 2.0 * (nf * self.r).sinh() / nf
    }
}

const Q_RADIAL: usize = 32;
const Q_LATERAL: usize = 16;

/// Midpoint nodes `(z, weight)` for the unit ball in `Rⁿ`.
fn ball_nodes(n: usize) -> Vec<([f64; 3], f64)> {
    match n {
        1 => (0..Q_LATERAL)
            .map(|i| {
                let h = 2.0 / Q_LATERAL as f64;
                ([-1.0 + (i as f64 + 0.5) * h, 0.0, 0.0], h)
            })
            .collect(),
        2 => {
            let (nr, nt) = (Q_LATERAL / 2, 2 * Q_LATERAL);
            let (hr, ht) = (1.0 / nr as f64, 2.0 * PI / nt as f64);
            let mut out = Vec::with_capacity(nr * nt);
            for i in 0..nr {
                let rho = (i as f64 + 0.5) * hr;
                for j in 0..nt {
                    let th = (j as f64 + 0.5) * ht;
                    out.push(([rho * th.cos(), rho * th.sin(), 0.0], rho * hr * ht));
                }
            }
            out
        }
        _ => {
            let q = Q_LATERAL / 2;
            let h = 2.0 / q as f64;
            let mut out = Vec::new();
            for i in 0..q {
                for j in 0..q {
                    for k in 0..q {
                        let z = [
                            -1.0 + (i as f64 + 0.5) * h,
                            -1.0 + (j as f64 + 0.5) * h,
                            -1.0 + (k as f64 + 0.5) * h,
                        ];
                        if z.iter().map(|v| v * v).sum::<f64>() < 1.0 {
                            out.push((z, h * h * h));
                        }
                    }
                }
            }
            out
        }
    }
}

/// `∫_Ω F dμ_h` for a pointwise integrand `F(w′, y)`.
fn window_integral(grid: &HalfSpaceGrid, win: &WindowSpec, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let n = grid.n;
    let nodes = ball_nodes(n);
    let hs = 2.0 / Q_RADIAL as f64;
    let scale = win.r * (-win.w).exp();
    let mut acc = 0.0;
    for i in 0..Q_RADIAL {
        let s = -1.0 + (i as f64 + 0.5) * hs;
        let w = win.w + win.r * s;
        // dμ_h = e^{n w′} dw′ dy with dw′ = r ds and dy = scaleⁿ dz
        let jac = (n as f64 * (w - win.w)).exp()
            * win.r
            * hs
            * scale.powi(n as i32)
            * (n as f64 * win.w).exp();
        let mut row = 0.0;
        for (z, wt) in &nodes {
            let mut c = [w, 0.0, 0.0, 0.0];
            for a in 0..n {
                c[a + 1] = win.x[a] + scale * z[a];
            }
            row += wt * f(&c[..=n]);
        }
        acc += jac * row;
    }
    acc
}

/// Power of `e^{w}` converting squared coordinate components into the
/// tangential `h_w`-norm of a component with all indices tangential.
fn tangential_factor(slots: &[Slot], w: f64) -> f64 {
    let k: f64 = slots
        .iter()
        .map(|s| if *s == Slot::Lower { 1.0 } else { -1.0 })
        .sum();
    (-k * w).exp()
}

/// Indices of components whose indices are all tangential.
fn tangential_components(t: &TensorField) -> Vec<usize> {
    (0..t.comps.len())
        .filter(|&c| t.multi(c).iter().all(|&i| i > 0))
        .collect()
}

/// `|T|_{h,t}` at an arbitrary point.
pub fn tangential_pointwise(t: &TensorField, c: &[f64]) -> f64 {
    let comps = tangential_components(t);
    let s: f64 = comps
        .iter()
        .map(|&k| fd::interpolate(&t.grid, &t.comps[k], c).powi(2))
        .sum();
    tangential_factor(&t.slots, c[0]) * s.sqrt()
}

/// `‖T‖_{L^p_t(Ω, h)}`.
pub fn tangential_lp_norm(t: &TensorField, win: &WindowSpec, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Precondition(format!("p = {p} must be at least 1")));
    }
    win.check_inside(&t.grid)?;
    let comps = tangential_components(t);
    let integrand = |c: &[f64]| {
        let s: f64 = comps
            .iter()
            .map(|&k| fd::interpolate(&t.grid, &t.comps[k], c).powi(2))
            .sum();
        (tangential_factor(&t.slots, c[0]) * s.sqrt()).powf(p)
    };
    Ok(window_integral(&t.grid, win, &integrand).powf(1.0 / p))
}

/// `‖F‖_{L^p(Ω, h)}` of a scalar given pointwise.
fn scalar_lp(grid: &HalfSpaceGrid, win: &WindowSpec, p: f64, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    window_integral(grid, win, &|c| f(c).abs().powf(p)).powf(1.0 / p)
}

/// Radial coordinate derivative `∂₀T` of every component.
pub fn radial_derivative(t: &TensorField) -> TensorField {
    let mut out = t.clone();
    out.symmetries.clear();
    for c in 0..t.comps.len() {
        out.comps[c] = t.d_comp(&t.multi(c), 0);
    }
    out
}

/// Midpoint rule for `∫_{a}^{b} g(w) dw`.
fn integrate_w(a: f64, b: f64, g: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let m = ((b - a) * 16.0).ceil().max(8.0) as usize;
    let h = (b - a) / m as f64;
    let mut acc = 0.0;
    for i in 0..m {
        acc += g(a + (i as f64 + 0.5) * h)?;
    }
    Ok(acc * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// First window inequality for a covariant tensor of rank `k`:
/// `‖T‖(Ω_{w1}) ≤ ∫ e^{(n/p−k)(w1−w)}‖∂₀T‖(Ω_w) dw + e^{(n/p−k)(w1−w0)}‖T‖(Ω_{w0})`.
pub fn check_moving_window1(
    t: &TensorField,
    p: f64,
    w0: f64,
    w1: f64,
    x: &[f64],
    r: f64,
) -> Result<InequalityCheck> {
    if t.slots.contains(&Slot::Upper) {
        return Err(Error::Precondition("tensor must be covariant".into()));
    }
    if w1 < w0 {
        return Err(Error::Precondition(format!(
            "need w0 ≤ w1, got {w0} > {w1}"
        )));
    }
    let grid = t.grid;
    let e = grid.n as f64 / p - t.rank() as f64;
    WindowSpec::new(w0, x, r)?.check_inside(&grid)?;
    let dt = radial_derivative(t);
    let lhs = tangential_lp_norm(t, &WindowSpec::new(w1, x, r)?, p)?;
    let integral = integrate_w(w0, w1, |w| {
        Ok((e * (w1 - w)).exp() * tangential_lp_norm(&dt, &WindowSpec::new(w, x, r)?, p)?)
    })?;
    let rhs =
        integral + (e * (w1 - w0)).exp() * tangential_lp_norm(t, &WindowSpec::new(w0, x, r)?, p)?;
    Ok(InequalityCheck {
        lhs,
        rhs,
        pass: lhs <= rhs * (1.0 + QUADRATURE_TOLERANCE) + ROUNDING_FLOOR * lhs.abs().min(rhs.abs()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window2Check {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    pub c1: f64,
    pub c2: f64,
}

/// Second window inequality, for the oscillation of a scalar around its
/// window average, with the explicit constants `c1`, `c2`.
pub fn check_moving_window2(
    f: &ScalarField,
    p: f64,
    w0: f64,
    w1: f64,
    x: &[f64],
    r: f64,
) -> Result<Window2Check> {
    let grid = f.grid;
    let n = grid.n as f64;
    if !(p > n + 1.0) {
        return Err(Error::Precondition(format!(
            "p = {p} must exceed n + 1 = {}",
            n + 1.0
        )));
    }
    if w1 <= w0 {
        return Err(Error::Precondition(format!(
            "need w0 < w1, got {w0} ≥ {w1}"
        )));
    }
    let win0 = WindowSpec::new(w0, x, r)?;
    let win1 = WindowSpec::new(w1, x, r)?;
    win0.check_inside(&grid)?;
    win1.check_inside(&grid)?;
    let d: Vec<Vec<f64>> = (0..=grid.n).map(|a| f.d(a)).collect();
    let val = |c: &[f64]| fd::interpolate(&grid, &f.values, c);
    let d0 = |c: &[f64]| fd::interpolate(&grid, &d[0], c);
    let dnorm = |c: &[f64]| {
        let tang: f64 = (1..=grid.n)
            .map(|a| fd::interpolate(&grid, &d[a], c).powi(2))
            .sum();
        (d0(c).powi(2) + (-2.0 * c[0]).exp() * tang).sqrt()
    };
    let vol = win1.volume(grid.n);
    let mean = window_integral(&grid, &win1, &val) / window_integral(&grid, &win1, &|_| 1.0);
    let lhs = scalar_lp(&grid, &win1, p, &|c| val(c) - mean);
    let c1 = 2.0 * r * p / (p - n - 1.0) * vol.powf(1.0 / p - 1.0);
    let c2 = c1 * r.exp();
    let integral = integrate_w(w0, w1, |w| {
        let win = WindowSpec::new(w, x, r)?;
        Ok((n / p * (w1 - w)).exp() * scalar_lp(&grid, &win, p, &d0))
    })?;
    let rhs = c1 * (n / p * (w1 - w0)).exp() * scalar_lp(&grid, &win0, p, &d0)
        + c2 * (-(1.0 - n / p) * (w1 - w0)).exp() * scalar_lp(&grid, &win0, p, &dnorm)
        + 2.0 * integral;
    let floor = ROUNDING_FLOOR * scalar_lp(&grid, &win1, p, &val);
    Ok(Window2Check {
        lhs,
        rhs,
        pass: lhs <= rhs * (1.0 + QUADRATURE_TOLERANCE) + floor,
        c1,
        c2,
    })
}

/// `sup` over window centers of `e^{δw}‖u‖_{W^{k,p}(Ω_{w,x}(1))}` for
/// `k ∈ {0, 1}`, with `|du|_h` in the first-order part.
pub fn weighted_local_norm(
    u: &ScalarField,
    k: usize,
    p: f64,
    delta: f64,
    region: &ReportingRegion,
) -> Result<f64> {
    if k > 1 {
        return Err(Error::Precondition(format!(
            "derivative order {k} not supported"
        )));
    }
    let grid = u.grid;
    let r = 1.0;
    let centers_w: Vec<f64> = {
        let mut out = Vec::new();
        let mut w = region.w_lo.max(grid.w0 + r + grid.dw());
        while w <= region.w_hi.min(grid.w_max - r - grid.dw()) + 1e-9 {
            out.push(w);
            w += 1.0;
        }
        out
    };
    if centers_w.len() < 4 {
        return Err(Error::Range(format!(
            "{} window centers along w, need 4",
            centers_w.len()
        )));
    }
    let d: Vec<Vec<f64>> = if k == 1 {
        (0..=grid.n).map(|a| u.d(a)).collect()
    } else {
        Vec::new()
    };
    let mut best: f64 = 0.0;
    for &w in &centers_w {
        let reach = r * (-w).exp();
        let lim = (region.x_half)
            .min(grid.half_width - grid.dx() - reach)
            .max(0.0);
        let xs = [-lim, 0.0, lim];
        let tuples: Vec<[f64; 3]> = match grid.n {
            1 => xs.iter().map(|&a| [a, 0.0, 0.0]).collect(),
            _ => xs
                .iter()
                .flat_map(|&a| xs.iter().map(move |&b| [a, b, 0.0]))
                .collect(),
        };
        for x in tuples {
            let win = WindowSpec::new(w, &x[..grid.n], r)?;
            win.check_inside(&grid)?;
            let mut norm = scalar_lp(&grid, &win, p, &|c| fd::interpolate(&grid, &u.values, c));
            if k == 1 {
                norm += scalar_lp(&grid, &win, p, &|c| {
                    let tang: f64 = (1..=grid.n)
                        .map(|a| fd::interpolate(&grid, &d[a], c).powi(2))
                        .sum();
                    (fd::interpolate(&grid, &d[0], c).powi(2) + (-2.0 * c[0]).exp() * tang).sqrt()
                });
            }
            best = best.max((delta * w).exp() * norm);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GronwallCheck {
    pub premise_holds: bool,
    pub envelope: Vec<f64>,
    /// `None` when the premise fails.
    pub pass: Option<bool>,
}

/// Check `f ≤ a + ∫ b f` on uniform samples and, if it holds, the
/// conclusion `f ≤ a + ∫_{w0}^{w} a(v) b(v) e^{∫_v^w b} dv`.
pub fn gronwall_envelope(
    a: &[f64],
    b: &[f64],
    f: &[f64],
    w0: f64,
    w1: f64,
) -> Result<GronwallCheck> {
    let m = a.len();
    if m < 2 || b.len() != m || f.len() != m || !(w1 > w0) {
        return Err(Error::Precondition(
            "need matching samples (≥ 2) on w0 < w1".into(),
        ));
    }
    if let Some(i) = b.iter().position(|&v| !(v >= 0.0)) {
        return Err(Error::Precondition(format!(
            "b = {} < 0 at sample {i}",
            b[i]
        )));
    }
    let h = (w1 - w0) / (m - 1) as f64;
    // cumulative trapezoid integrals
    let mut bf = vec![0.0; m];
    let mut bb = vec![0.0; m];
    for i in 1..m {
        bf[i] = bf[i - 1] + 0.5 * h * (b[i - 1] * f[i - 1] + b[i] * f[i]);
        bb[i] = bb[i - 1] + 0.5 * h * (b[i - 1] + b[i]);
    }
    let scale = f.iter().chain(a).fold(1e-300f64, |s, v| s.max(v.abs()));
    let premise_holds = (0..m).all(|i| f[i] <= a[i] + bf[i] + 1e-9 * scale);
    let envelope: Vec<f64> = (0..m)
        .map(|i| {
            let mut acc = 0.0;
            for v in 0..=i {
                let g = a[v] * b[v] * (bb[i] - bb[v]).exp();
                let wt = if v == 0 || v == i { 0.5 } else { 1.0 };
                acc += wt * g;
            }
            a[i] + if i > 0 { h * acc } else { 0.0 }
        })
        .collect();
    let pass = premise_holds.then(|| {
        (0..m).all(|i| {
            f[i] <= envelope[i] + QUADRATURE_TOLERANCE * envelope[i].abs().max(1e-12 * scale)
        })
    });
    Ok(GronwallCheck {
        premise_holds,
        envelope,
        pass,
    })
}

/// Smooth random tensor field whose tangential components are sums of a few
/// exponential-times-sinusoid modes; other components vanish.
pub fn random_tangential_field<R: Rng>(
    grid: &HalfSpaceGrid,
    rank: usize,
    rng: &mut R,
) -> TensorField {
    let mut t = TensorField::covariant(*grid, rank, 0.0);
    for c in tangential_components(&t) {
        let modes: Vec<[f64; 6]> = (0..3)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.5) + rank as f64,
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.0..6.3),
                ]
            })
            .collect();
        t.comps[c] = (0..grid.len())
            .map(|p| {
                let x = grid.point(p);
                modes
                    .iter()
                    .map(|m| {
                        let phase = m[2] * x[1]
                            + if grid.n > 1 { m[3] * x[2] } else { 0.0 }
                            + m[4] * x[0]
                            + m[5];
                        m[0] * (m[1] * x[0]).exp() * phase.sin()
                    })
                    .sum()
            })
            .collect();
    }
    t
}

/// Smooth random scalar field.
pub fn random_scalar_field<R: Rng>(grid: &HalfSpaceGrid, rng: &mut R) -> ScalarField {
    let t = random_tangential_field(grid, 0, rng);
    ScalarField {
        grid: *grid,
        values: t.comps[0].clone(),
        weight: 0.0,
    }
}
