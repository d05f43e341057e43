//! Model asymptotically hyperbolic metrics with known order.
//!
//! * hyperbolic: `dw² + e^{2w}δ`
//! * warped: `dw² + f(w)²δ` with `f = e^w(1 + ε e^{−aw})`
//! * perturbed: `N = 1 + ε_N e^{−aw}ν(x)`, `g_{μν} = e^{2w}(δ + ε e^{−aw}κ(x)B)`
//!
//! `κ = ν = (1 − |x|²)⁶` clipped at zero (C⁵) and `B` is a fixed symmetric
//! matrix with unit spectral norm, so the tangential block stays positive
//! definite whenever `ε < 1`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ScalarField, TensorField};
use crate::grid::{HalfSpaceGrid, ReportingRegion};
use crate::tensor_core::{curvature_tensors, norm_g, ZeroShiftMetric};
use crate::window_norms::{fit_decay_rate, station_sup, DecayFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hyperbolic,
    Warped,
    Perturbed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// `(1 − |x|²)⁶`, clipped at 0.
    Bump6,
    /// `(1 − |x|²)⁴`, clipped at 0.
    Bump4,
}

impl Profile {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let base = (1.0 - r2).max(0.0);
        match self {
            Profile::Bump6 => base.powi(6),
            Profile::Bump4 => base.powi(4),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n: usize,
    pub order: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub epsilon_lapse: f64,
    #[serde(default = "default_profile")]
    pub profile: Profile,
}

fn default_profile() -> Profile {
    Profile::Bump6
}

impl ModelSpec {
    pub fn hyperbolic(n: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Hyperbolic,
            n,
            order: 1.0,
            epsilon: 0.0,
            epsilon_lapse: 0.0,
            profile: Profile::Bump6,
        }
    }

    pub fn warped(n: usize, order: f64, epsilon: f64) -> Self {
        ModelSpec {
            kind: ModelKind::Warped,
            n,
            order,
            epsilon,
            epsilon_lapse: 0.0,
            profile: Profile::Bump6,
        }
    }

    pub fn perturbed(n: usize, order: f64, epsilon: f64, epsilon_lapse: f64) -> Self {
        ModelSpec {
            kind: ModelKind::Perturbed,
            n,
            order,
            epsilon,
            epsilon_lapse,
            profile: Profile::Bump6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > 3 {
            return Err(Error::Config(format!(
                "model dimension n = {} must be 1, 2 or 3",
                self.n
            )));
        }
        if !(self.order > 0.0 && self.order < 2.0) {
            return Err(Error::Config(format!(
                "order a = {} must lie in (0, 2)",
                self.order
            )));
        }
        if !(self.epsilon.abs() < 1.0 && self.epsilon_lapse.abs() < 1.0) {
            return Err(Error::Domain(format!(
                "amplitudes ε = {}, ε_N = {} must be below 1 in magnitude",
                self.epsilon, self.epsilon_lapse
            )));
        }
        Ok(())
    }

    pub fn warp(&self) -> WarpProfile {
        WarpProfile::alh(self.epsilon, self.order)
    }
}

/// Where a metric comes from; lets solvers re-sample it on other grids.
pub trait MetricSource {
    fn sample(&self, grid: &HalfSpaceGrid) -> Result<ZeroShiftMetric>;
    /// `lim e^{−2w} g_{μν}` at a boundary point.
    fn boundary_metric(&self, x: &[f64]) -> DMatrix<f64>;
}

impl MetricSource for ModelSpec {
    fn sample(&self, grid: &HalfSpaceGrid) -> Result<ZeroShiftMetric> {
        if grid.n != self.n {
            return Err(Error::Config(format!(
                "model has n = {}, grid has n = {}",
                self.n, grid.n
            )));
        }
        self.validate()?;
        match self.kind {
            ModelKind::Hyperbolic => Ok(make_hyperbolic(grid)),
            ModelKind::Warped => Ok(make_warped(grid, &self.warp())?.metric),
            ModelKind::Perturbed => make_perturbed(grid, self),
        }
    }

    fn boundary_metric(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n)
    }
}

/// Symmetric tangential pattern with unit spectral norm.
pub fn pattern(n: usize) -> DMatrix<f64> {
    match n {
        1 => DMatrix::from_element(1, 1, 1.0),
        2 => DMatrix::from_row_slice(2, 2, &[0.6, 0.8, 0.8, -0.6]),
        _ => DMatrix::from_fn(n, n, |a, b| {
            if a == b {
                if a % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            } else {
                0.0
            }
        }),
    }
}

fn tangential(grid: &HalfSpaceGrid, f: impl Fn(&[f64], usize, usize) -> f64) -> TensorField {
    let mut gt = TensorField::covariant(*grid, 2, 0.0);
    let d = grid.dim();
    for p in 0..grid.len() {
        let c = grid.point(p);
        for a in 1..d {
            for b in 1..d {
                gt.comps[a * d + b][p] = f(&c[..d], a - 1, b - 1);
            }
        }
    }
    gt
}

pub fn make_hyperbolic(grid: &HalfSpaceGrid) -> ZeroShiftMetric {
    let lapse = ScalarField::constant(*grid, 1.0);
    let gt = tangential(
        grid,
        |c, a, b| if a == b { (2.0 * c[0]).exp() } else { 0.0 },
    );
    ZeroShiftMetric::new(lapse, &gt).expect("hyperbolic metric is valid")
}

/// Radial profile `f` with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpProfile {
    /// `f = e^w (1 + c e^{−a w})`.
    pub c: f64,
    pub a: f64,
}

impl WarpProfile {
    pub fn alh(c: f64, a: f64) -> Self {
        WarpProfile { c, a }
    }

    pub fn f(&self, w: f64) -> f64 {
        w.exp() + self.c * ((1.0 - self.a) * w).exp()
    }

    pub fn fp(&self, w: f64) -> f64 {
        w.exp() + self.c * (1.0 - self.a) * ((1.0 - self.a) * w).exp()
    }

    pub fn fpp(&self, w: f64) -> f64 {
        w.exp() + self.c * (1.0 - self.a).powi(2) * ((1.0 - self.a) * w).exp()
    }
}

/// Warped metric together with its analytic curvature.
#[derive(Debug, Clone)]
pub struct WarpedModel {
    pub metric: ZeroShiftMetric,
    pub profile: WarpProfile,
}

impl WarpedModel {
    /// Sectional curvature of planes containing `∂_w`.
    pub fn radial_sectional(&self, w: f64) -> f64 {
        -self.profile.fpp(w) / self.profile.f(w)
    }

    /// Sectional curvature of tangential planes; the cross-section is flat,
    /// so only the warping term `−f′²/f²` remains.
    pub fn tangential_sectional(&self, w: f64) -> f64 {
        -(self.profile.fp(w) / self.profile.f(w)).powi(2)
    }

    /// Mean curvature `n f′/f` of the level sets of `w`.
    pub fn mean_curvature(&self, w: f64) -> f64 {
        self.metric.grid.n as f64 * self.profile.fp(w) / self.profile.f(w)
    }
}

pub fn make_warped(grid: &HalfSpaceGrid, profile: &WarpProfile) -> Result<WarpedModel> {
    for iw in 0..grid.nw {
        let f = profile.f(grid.w(iw));
        if !(f > 0.0) {
            return Err(Error::Domain(format!(
                "warp profile f = {f} at w = {}",
                grid.w(iw)
            )));
        }
    }
    let lapse = ScalarField::constant(*grid, 1.0);
    let gt = tangential(
        grid,
        |c, a, b| if a == b { profile.f(c[0]).powi(2) } else { 0.0 },
    );
    Ok(WarpedModel {
        metric: ZeroShiftMetric::new(lapse, &gt)?,
        profile: *profile,
    })
}

pub fn make_perturbed(grid: &HalfSpaceGrid, spec: &ModelSpec) -> Result<ZeroShiftMetric> {
    spec.validate()?;
    let b = pattern(grid.n);
    let a = spec.order;
    let lapse = ScalarField::from_fn(*grid, 0.0, |c| {
        1.0 + spec.epsilon_lapse * (-a * c[0]).exp() * spec.profile.eval(&c[1..])
    });
    let gt = tangential(grid, |c, i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        (2.0 * c[0]).exp()
            * (delta + spec.epsilon * (-a * c[0]).exp() * spec.profile.eval(&c[1..]) * b[(i, j)])
    });
    ZeroShiftMetric::new(lapse, &gt).map_err(|e| match e {
        Error::Domain(msg) => Error::Domain(format!("amplitude too large: {msg}")),
        other => other,
    })
}

/// Decay of `|ℰ|_g = |R + 𝒦|_g` over the reporting stations.
pub fn verify_alh_order(metric: &ZeroShiftMetric) -> Result<DecayFit> {
    let curv = curvature_tensors(metric);
    let norms = norm_g(&curv.e, &metric.inverse());
    let region = ReportingRegion::of(&metric.grid)?;
    let (stations, values) = station_sup(&metric.grid, &region, &norms);
    fit_decay_rate(&stations, &values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::sectional;
    use crate::window_norms::FitOutcome;

    fn tall(n: usize) -> HalfSpaceGrid {
        HalfSpaceGrid::build(n, 0.0, 12.0, 241, 2.0, if n == 1 { 33 } else { 17 }).unwrap()
    }

    #[test]
    fn zero_amplitude_is_hyperbolic() {
        let g = tall(1);
        let m = make_perturbed(&g, &ModelSpec::perturbed(1, 0.5, 0.0, 0.0)).unwrap();
        assert_eq!(m, make_hyperbolic(&g));
        let w = make_warped(&g, &WarpProfile::alh(0.0, 0.5)).unwrap();
        for p in 0..g.len() {
            assert!((w.metric.g.comps[3][p] / m.g.comps[3][p] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn hyperbolic_fit_is_sentinel() {
        let fit = verify_alh_order(&make_hyperbolic(&tall(1))).unwrap();
        assert_eq!(fit.outcome, FitOutcome::IdenticallySmall);
    }

    #[test]
    fn warped_orders() {
        for a in [0.5, 1.5] {
            let w = make_warped(&tall(1), &WarpProfile::alh(0.1, a)).unwrap();
            let fit = verify_alh_order(&w.metric).unwrap();
            let rate = fit.rate().unwrap();
            assert!((rate - a).abs() <= 0.05, "a = {a}: fitted {rate}");
        }
    }

    #[test]
    fn perturbed_orders() {
        for (a, tol) in [(0.5, 0.05), (1.5, 0.1)] {
            let m = make_perturbed(&tall(1), &ModelSpec::perturbed(1, a, 0.05, 0.05)).unwrap();
            let rate = verify_alh_order(&m).unwrap().rate().unwrap();
            assert!((rate - a).abs() <= tol, "a = {a}: fitted {rate}");
        }
    }

    #[test]
    fn perturbed_two_dimensional_order() {
        let g = HalfSpaceGrid::build(2, 0.0, 8.0, 161, 2.0, 17).unwrap();
        let m = make_perturbed(&g, &ModelSpec::perturbed(2, 1.5, 0.05, 0.05)).unwrap();
        let rate = verify_alh_order(&m).unwrap().rate().unwrap();
        assert!((rate - 1.5).abs() <= 0.1, "fitted {rate}");
    }

    #[test]
    fn halving_amplitudes_halves_constant() {
        let g = tall(1);
        let full = verify_alh_order(
            &make_perturbed(&g, &ModelSpec::perturbed(1, 0.5, 0.05, 0.05)).unwrap(),
        )
        .unwrap();
        let half = verify_alh_order(
            &make_perturbed(&g, &ModelSpec::perturbed(1, 0.5, 0.025, 0.025)).unwrap(),
        )
        .unwrap();
        let ratio = (full.log_constant().unwrap() - half.log_constant().unwrap()).exp();
        assert!((ratio - 2.0).abs() <= 0.2, "constant ratio {ratio}");
    }

    #[test]
    fn warped_sectional_curvatures() {
        let profile = WarpProfile::alh(0.5, 0.5);
        let mut errs = Vec::new();
        for nw in [41, 81, 161] {
            let g = HalfSpaceGrid::build(1, 0.0, 4.0, nw, 2.0, 9).unwrap();
            let model = make_warped(&g, &profile).unwrap();
            let curv = curvature_tensors(&model.metric);
            let reg = ReportingRegion::of(&g).unwrap();
            let err = reg
                .points(&g)
                .into_iter()
                .map(|p| {
                    let w = g.point(p)[0];
                    (sectional(&curv.riemann, &model.metric.g, 0, 1, p) - model.radial_sectional(w))
                        .abs()
                })
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for pair in errs.windows(2) {
            let r = pair[0] / pair[1];
            assert!((3.5..=4.5).contains(&r), "ratio {r} {errs:?}");
        }

        let g = HalfSpaceGrid::build(2, 0.0, 4.0, 81, 2.0, 9).unwrap();
        let model = make_warped(&g, &profile).unwrap();
        let curv = curvature_tensors(&model.metric);
        for p in ReportingRegion::of(&g).unwrap().points(&g) {
            let w = g.point(p)[0];
            let got = sectional(&curv.riemann, &model.metric.g, 1, 2, p);
            assert!(
                (got - model.tangential_sectional(w)).abs() < 1e-3,
                "{got} vs {}",
                model.tangential_sectional(w)
            );
        }
    }

    #[test]
    fn large_amplitude_rejected() {
        let g = tall(1);
        assert!(make_perturbed(&g, &ModelSpec::perturbed(1, 0.5, 1.5, 0.0)).is_err());
        assert!(make_warped(&g, &WarpProfile::alh(-2.0, 0.5)).is_err());
    }

    #[test]
    fn bump_profiles() {
        assert_eq!(Profile::Bump6.eval(&[0.0]), 1.0);
        assert_eq!(Profile::Bump6.eval(&[1.2]), 0.0);
        assert!((Profile::Bump4.eval(&[0.5, 0.5]) - 0.0625).abs() < 1e-15);
        assert!((pattern(2).symmetric_eigenvalues().amax() - 1.0).abs() < 1e-12);
    }
}
