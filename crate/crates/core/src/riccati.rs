//! Riccati evolution of the shape operator along the radial direction:
//! the scalar model `λ′ + λ² = f` and the system `∂S + S² = −R^i_{0j0}`,
//! `∂g = 2gS` for the level-set metric, both with classical RK4.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `|λ|` beyond this is recorded as a blow-up.
pub const BLOW_UP: f64 = 1e6;

/// Eigenvalue deviations below this are treated as rounding.
pub const DEVIATION_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiCurve {
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
    pub lambda0: f64,
    pub step: f64,
    /// First sample where `λ` left `(0, BLOW_UP)`.
    pub blow_up: Option<f64>,
}

fn check_grid(s_grid: &[f64]) -> Result<()> {
    if s_grid.len() < 2 {
        return Err(Error::Precondition("need at least two s samples".into()));
    }
    if s_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition(
            "s samples must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Uniform samples `s0, s0 + h, …, s1`.
pub fn uniform_grid(s0: f64, s1: f64, h: f64) -> Vec<f64> {
    let m = ((s1 - s0) / h).round() as usize;
    (0..=m)
        .map(|i| s0 + (s1 - s0) * i as f64 / m as f64)
        .collect()
}

pub fn integrate_scalar_riccati(
    f: &dyn Fn(f64) -> f64,
    lambda0: f64,
    s_grid: &[f64],
) -> Result<RiccatiCurve> {
    if !(lambda0 > 0.0) {
        return Err(Error::Precondition(format!(
            "λ(0) = {lambda0} must be positive"
        )));
    }
    check_grid(s_grid)?;
    let rhs = |s: f64, l: f64| f(s) - l * l;
    let mut lambda = vec![lambda0];
    let mut blow_up = None;
    for w in s_grid.windows(2) {
        let (s, h) = (w[0], w[1] - w[0]);
        let l = *lambda.last().unwrap();
        let k1 = rhs(s, l);
        let k2 = rhs(s + 0.5 * h, l + 0.5 * h * k1);
        let k3 = rhs(s + 0.5 * h, l + 0.5 * h * k2);
        let k4 = rhs(s + h, l + h * k3);
        let next = l + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        lambda.push(next);
        if !(next > 0.0 && next < BLOW_UP) {
            blow_up = Some(w[1]);
            break;
        }
    }
    let step = s_grid[1] - s_grid[0];
    Ok(RiccatiCurve {
        s: s_grid[..lambda.len()].to_vec(),
        lambda,
        lambda0,
        step,
        blow_up,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeEvolution {
    pub s: Vec<f64>,
    /// Mixed tensor `S^i_j`.
    pub shape: Vec<DMatrix<f64>>,
    pub metric: Vec<DMatrix<f64>>,
    /// First sample where the level-set metric lost positivity.
    pub failure: Option<f64>,
}

/// Project `S` onto the `g`-self-adjoint matrices: `½(S + g⁻¹Sᵀg)`.
fn self_adjoint(s: &DMatrix<f64>, g: &DMatrix<f64>, ginv: &DMatrix<f64>) -> DMatrix<f64> {
    (s + ginv * s.transpose() * g) * 0.5
}

pub fn integrate_riccati_system(
    curvature: &dyn Fn(f64) -> DMatrix<f64>,
    s0: &DMatrix<f64>,
    g0: &DMatrix<f64>,
    s_grid: &[f64],
) -> Result<ShapeEvolution> {
    check_grid(s_grid)?;
    let n = g0.nrows();
    if s0.shape() != (n, n) || g0.shape() != (n, n) {
        return Err(Error::Precondition(
            "S0 and g0 must be square of equal size".into(),
        ));
    }
    if g0.clone().cholesky().is_none() {
        return Err(Error::Precondition("g0 must be positive definite".into()));
    }
    let g0inv = g0.clone().try_inverse().unwrap();
    let sym0 = self_adjoint(s0, g0, &g0inv);
    if eigenvalues(&sym0, g0)?.iter().any(|&e| e <= 0.0) {
        return Err(Error::Precondition(
            "S0 must be positive definite with respect to g0".into(),
        ));
    }
    let rhs =
        |s: f64, sh: &DMatrix<f64>, g: &DMatrix<f64>| (-(sh * sh) - curvature(s), 2.0 * g * sh);
    let mut shape = vec![sym0];
    let mut metric = vec![g0.clone()];
    let mut failure = None;
    for w in s_grid.windows(2) {
        let (s, h) = (w[0], w[1] - w[0]);
        let (sh, g) = (shape.last().unwrap(), metric.last().unwrap());
        let (a1, b1) = rhs(s, sh, g);
        let (a2, b2) = rhs(s + 0.5 * h, &(sh + &a1 * (0.5 * h)), &(g + &b1 * (0.5 * h)));
        let (a3, b3) = rhs(s + 0.5 * h, &(sh + &a2 * (0.5 * h)), &(g + &b2 * (0.5 * h)));
        let (a4, b4) = rhs(s + h, &(sh + &a3 * h), &(g + &b3 * h));
        let sn = sh + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
        let gn = g + (b1 + b2 * 2.0 + b3 * 2.0 + b4) * (h / 6.0);
        let gn = (&gn + gn.transpose()) * 0.5;
        let Some(gninv) = gn.clone().cholesky().map(|c| c.inverse()) else {
            failure = Some(w[1]);
            break;
        };
        shape.push(self_adjoint(&sn, &gn, &gninv));
        metric.push(gn);
    }
    Ok(ShapeEvolution {
        s: s_grid[..shape.len()].to_vec(),
        shape,
        metric,
        failure,
    })
}

/// Eigenvalues of a `g`-self-adjoint `S`, ascending, via
/// `L⁻¹(gS)L⁻ᵀ` with `g = LLᵀ`.
pub fn eigenvalues(shape: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<Vec<f64>> {
    let l = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Consistency("metric not positive definite".into()))?
        .l();
    let linv = l.try_inverse().unwrap();
    let gs = g * shape;
    let asym = (&gs - gs.transpose()).amax();
    if asym > 1e-8 * (1.0 + gs.amax()) {
        return Err(Error::Consistency(format!(
            "shape operator not self-adjoint (defect {asym:e})"
        )));
    }
    let m = &linv * (&gs + gs.transpose()) * 0.5 * linv.transpose();
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ev)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeBounds {
    pub c_lower: f64,
    pub c_upper: f64,
    pub pass: bool,
}

/// Smallest constants in `(1 − C e^{−as}) ≤ λ(s) ≤ (1 + C e^{−as})` for
/// curves of eigenvalues. The bound passes when the constant needed over
/// the last quarter of the window does not exceed the one needed before,
/// so it is not still growing with `s`.
pub fn sandwich_constants(s: &[f64], lo: &[f64], hi: &[f64], a: f64) -> ShapeBounds {
    let m = s.len();
    let split = (3 * m) / 4;
    let need = |range: std::ops::Range<usize>, lower: bool| {
        range
            .map(|i| {
                let dev = if lower { 1.0 - lo[i] } else { hi[i] - 1.0 };
                (dev - DEVIATION_FLOOR).max(0.0) * (a * s[i]).exp()
            })
            .fold(0.0, f64::max)
    };
    let c_lower = need(0..m, true);
    let c_upper = need(0..m, false);
    let stable = |lower: bool| need(split..m, lower) <= 1.05 * need(0..split, lower);
    let pass = c_lower.is_finite() && c_upper.is_finite() && stable(true) && stable(false);
    ShapeBounds {
        c_lower,
        c_upper,
        pass,
    }
}

pub fn verify_shape_bounds(evo: &ShapeEvolution, a: f64) -> Result<ShapeBounds> {
    if evo.s.len() < 8 {
        return Err(Error::Precondition("evolution too short to certify".into()));
    }
    let mut lo = Vec::with_capacity(evo.s.len());
    let mut hi = Vec::with_capacity(evo.s.len());
    for (sh, g) in evo.shape.iter().zip(&evo.metric) {
        let ev = eigenvalues(sh, g)?;
        lo.push(ev[0]);
        hi.push(*ev.last().unwrap());
    }
    Ok(sandwich_constants(&evo.s, &lo, &hi, a))
}

/// Same certificate for a scalar curve.
pub fn scalar_certificate(curve: &RiccatiCurve, a: f64) -> ShapeBounds {
    sandwich_constants(&curve.s, &curve.lambda, &curve.lambda, a)
}

/// Curve samples `(s, |λ − 1|)` at unit spacing on `[s0, s1]`.
pub fn deviation_stations(curve: &RiccatiCurve, s0: f64, s1: f64) -> (Vec<f64>, Vec<f64>) {
    let mut st = Vec::new();
    let mut vals = Vec::new();
    let mut s = s0;
    while s <= s1 + 1e-9 {
        let i = curve
            .s
            .iter()
            .position(|&x| (x - s).abs() < 0.5 * curve.step)
            .expect("station on grid");
        st.push(s);
        vals.push((curve.lambda[i] - 1.0).abs());
        s += 1.0;
    }
    (st, vals)
}
