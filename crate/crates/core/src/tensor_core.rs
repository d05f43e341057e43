//! Zero-shift metrics, Christoffel symbols, curvature and conformal changes.
//!
//! Index convention: `R^k_{lij}` is the component of `R(∂_i, ∂_j)∂_l` along
//! `∂_k`, with `R(X,Y) = ∇_X∇_Y − ∇_Y∇_X − ∇_{[X,Y]}`, and the lowered tensor is
//! `R_{klij} = g_{km} R^m_{lij}`. Hyperbolic space then has
//! `R = −𝒦` with `𝒦_{klij} = g_{ki}g_{lj} − g_{kj}g_{li}`, so `ℰ = R + 𝒦`
//! vanishes on it.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::{ScalarField, Slot, Symmetry, TensorField};
use crate::grid::HalfSpaceGrid;

pub fn build_grid(
    n: usize,
    w0: f64,
    w_max: f64,
    nw: usize,
    half_width: f64,
    nx: usize,
) -> Result<HalfSpaceGrid> {
    HalfSpaceGrid::build(n, w0, w_max, nw, half_width, nx)
}

/// `g = N² dw² + g_{μν} dx^μ dx^ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShiftMetric {
    pub grid: HalfSpaceGrid,
    pub lapse: ScalarField,
    /// Full `(n+1)×(n+1)` metric; `g_{00} = N²` and `g_{0μ} = 0`.
    pub g: TensorField,
}

impl ZeroShiftMetric {
    /// Assemble from the lapse and the tangential block; only the `μν ≥ 1`
    /// components of `gt` are read.
    pub fn new(lapse: ScalarField, gt: &TensorField) -> Result<Self> {
        let grid = lapse.grid;
        if gt.grid != grid || gt.rank() != 2 {
            return Err(Error::Data(
                "tangential metric must be rank 2 on the lapse grid".into(),
            ));
        }
        if let Some(p) = lapse.values.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Domain(format!("lapse not positive at point {p}")));
        }
        let n = grid.n;
        let mut g = TensorField::covariant(grid, 2, 0.0);
        g.index_weight = gt.index_weight;
        for a in 1..=n {
            for b in 1..=n {
                let c = g.flat(&[a, b]);
                g.comps[c] = gt.comp(&[a, b]).to_vec();
            }
        }
        g.comps[0] = lapse.values.iter().map(|v| v * v).collect();
        let g = g.with_symmetry(Symmetry::Symmetric(0, 1));
        for p in 0..grid.len() {
            let block = DMatrix::from_fn(n, n, |a, b| g.at(p, &[a + 1, b + 1]));
            if block.iter().any(|v| !v.is_finite()) || block.cholesky().is_none() {
                return Err(Error::Domain(format!(
                    "tangential metric not positive definite at point {p}"
                )));
            }
        }
        Ok(ZeroShiftMetric { grid, lapse, g })
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Inverse metric `g^{ij}`.
    pub fn inverse(&self) -> TensorField {
        invert_metric(&self.g)
    }

    /// Tangential metric `g_{μν}` as an `n×n` matrix at a point.
    pub fn tangential_at(&self, p: usize) -> DMatrix<f64> {
        let n = self.grid.n;
        DMatrix::from_fn(n, n, |a, b| self.g.at(p, &[a + 1, b + 1]))
    }
}

/// Pointwise inverse of a symmetric rank-2 covariant field.
pub fn invert_metric(g: &TensorField) -> TensorField {
    let d = g.dim();
    let mut inv = TensorField::zeros(g.grid, vec![Slot::Upper, Slot::Upper], -g.weight);
    inv.index_weight = g.index_weight;
    for p in 0..g.grid.len() {
        let m = DMatrix::from_fn(d, d, |a, b| g.at(p, &[a, b]));
        let mi = m.try_inverse().expect("metric must be invertible");
        for a in 0..d {
            for b in 0..d {
                inv.comps[a * d + b][p] = mi[(a, b)];
            }
        }
    }
    inv.with_symmetry(Symmetry::Symmetric(0, 1))
}

/// Matrix of a rank-2 field at one point.
pub fn matrix_at(t: &TensorField, p: usize) -> DMatrix<f64> {
    let d = t.dim();
    DMatrix::from_fn(d, d, |a, b| t.comps[a * d + b][p])
}

/// Christoffel symbols `Γ^k_{ij}` of a zero-shift metric from the closed
/// forms in terms of `N` and `g_{μν}`.
pub fn christoffel_zero_shift(metric: &ZeroShiftMetric) -> TensorField {
    let grid = metric.grid;
    let n = grid.n;
    let d = n + 1;
    let np = grid.len();
    let g = &metric.g;
    let ginv = metric.inverse();
    let lapse = &metric.lapse.values;
    let dn: Vec<Vec<f64>> = (0..d).map(|a| metric.lapse.d(a)).collect();
    // dg[a][b][c] = ∂_c g_{ab} for tangential a, b
    let mut dg = vec![vec![vec![Vec::new(); d]; d]; d];
    for a in 1..d {
        for b in a..d {
            for c in 0..d {
                dg[a][b][c] = g.d_comp(&[a, b], c);
                if a != b {
                    dg[b][a][c] = dg[a][b][c].clone();
                }
            }
        }
    }
    let mut gamma = TensorField::zeros(grid, vec![Slot::Upper, Slot::Lower, Slot::Lower], 0.0);
    for p in 0..np {
        let nn = lapse[p];
        gamma.comps[0][p] = dn[0][p] / nn;
        for mu in 1..d {
            let v = dn[mu][p] / nn;
            gamma.comps[mu][p] = v;
            gamma.comps[mu * d][p] = v;
            for nu in 1..d {
                gamma.comps[mu * d + nu][p] = -0.5 * dg[mu][nu][0][p] / (nn * nn);
            }
            let mut v00 = 0.0;
            for nu in 1..d {
                v00 += ginv.comps[mu * d + nu][p] * dn[nu][p];
            }
            gamma.comps[mu * d * d][p] = -nn * v00;
            for nu in 1..d {
                let mut s = 0.0;
                for sg in 1..d {
                    s += ginv.comps[mu * d + sg][p] * dg[sg][nu][0][p];
                }
                gamma.comps[(mu * d) * d + nu][p] = 0.5 * s;
                gamma.comps[(mu * d + nu) * d][p] = 0.5 * s;
                for sg in 1..d {
                    let mut t = 0.0;
                    for al in 1..d {
                        t += ginv.comps[mu * d + al][p]
                            * (dg[al][sg][nu][p] + dg[nu][al][sg][p] - dg[nu][sg][al][p]);
                    }
                    gamma.comps[(mu * d + nu) * d + sg][p] = 0.5 * t;
                }
            }
        }
    }
    gamma.with_symmetry(Symmetry::Symmetric(1, 2))
}

/// Christoffel symbols from a general metric with precomputed partials
/// `dg[c][a*d+b] = ∂_c g_{ab}`.
pub fn christoffel_from_partials(ginv: &TensorField, dg: &[Vec<Vec<f64>>]) -> TensorField {
    let grid = ginv.grid;
    let d = grid.dim();
    let mut gamma = TensorField::zeros(grid, vec![Slot::Upper, Slot::Lower, Slot::Lower], 0.0);
    for p in 0..grid.len() {
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let mut s = 0.0;
                    for a in 0..d {
                        s += ginv.comps[k * d + a][p]
                            * (dg[i][a * d + j][p] + dg[j][i * d + a][p] - dg[a][i * d + j][p]);
                    }
                    gamma.comps[(k * d + i) * d + j][p] = 0.5 * s;
                }
            }
        }
    }
    gamma.with_symmetry(Symmetry::Symmetric(1, 2))
}

/// Curvature of a metric together with the model tensors.
#[derive(Debug, Clone)]
pub struct Curvature {
    /// `R_{klij}`.
    pub riemann: TensorField,
    /// `Ric_{lj} = R^k_{lkj}`.
    pub ricci: TensorField,
    /// `𝒦_{klij} = g_{ki}g_{lj} − g_{kj}g_{li}`.
    pub kappa: TensorField,
    /// `ℰ = R + 𝒦`.
    pub e: TensorField,
}

/// Riemann tensor `R_{klij}` from a metric and its Christoffel symbols,
/// projected onto the pair (anti)symmetries.
pub fn riemann_from(g: &TensorField, gamma: &TensorField) -> TensorField {
    let grid = g.grid;
    let d = grid.dim();
    let np = grid.len();
    let gi = |k: usize, i: usize, j: usize| (k * d + i) * d + j;
    // dgamma[a][c] = ∂_a Γ^{(c)}
    let dgamma: Vec<Vec<Vec<f64>>> = (0..d)
        .map(|a| {
            (0..d * d * d)
                .map(|c| gamma.d_comp(&gamma.multi(c), a))
                .collect()
        })
        .collect();
    let mut up = vec![vec![0.0; np]; d * d * d * d];
    for k in 0..d {
        for l in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let c = ((k * d + l) * d + i) * d + j;
                    if i == j {
                        continue;
                    }
                    for p in 0..np {
                        let mut v = dgamma[i][gi(k, j, l)][p] - dgamma[j][gi(k, i, l)][p];
                        for m in 0..d {
                            v += gamma.comps[gi(k, i, m)][p] * gamma.comps[gi(m, j, l)][p]
                                - gamma.comps[gi(k, j, m)][p] * gamma.comps[gi(m, i, l)][p];
                        }
                        up[c][p] = v;
                    }
                }
            }
        }
    }
    let mut r = TensorField::covariant(grid, 4, 0.0);
    for k in 0..d {
        for rest in 0..d * d * d {
            let c = k * d * d * d + rest;
            for p in 0..np {
                let mut v = 0.0;
                for m in 0..d {
                    v += g.comps[k * d + m][p] * up[m * d * d * d + rest][p];
                }
                r.comps[c][p] = v;
            }
        }
    }
    r.with_symmetry(Symmetry::Antisymmetric(0, 1))
        .with_symmetry(Symmetry::Antisymmetric(2, 3))
        .with_pair_symmetry()
}

impl TensorField {
    /// Enforce `T_{abcd} = T_{cdab}` on a rank-4 field.
    pub fn with_pair_symmetry(mut self) -> Self {
        let d = self.dim();
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    for e in 0..d {
                        let i1 = ((a * d + b) * d + c) * d + e;
                        let i2 = ((c * d + e) * d + a) * d + b;
                        if i2 <= i1 {
                            continue;
                        }
                        for p in 0..self.grid.len() {
                            let m = 0.5 * (self.comps[i1][p] + self.comps[i2][p]);
                            self.comps[i1][p] = m;
                            self.comps[i2][p] = m;
                        }
                    }
                }
            }
        }
        self
    }
}

/// Ricci contraction `Ric_{lj} = g^{km} R_{mlkj}`.
pub fn ricci_from(riemann: &TensorField, ginv: &TensorField) -> TensorField {
    let grid = riemann.grid;
    let d = grid.dim();
    let mut ric = TensorField::covariant(grid, 2, 0.0);
    for l in 0..d {
        for j in 0..d {
            for p in 0..grid.len() {
                let mut v = 0.0;
                for k in 0..d {
                    for m in 0..d {
                        v += ginv.comps[k * d + m][p]
                            * riemann.comps[((m * d + l) * d + k) * d + j][p];
                    }
                }
                ric.comps[l * d + j][p] = v;
            }
        }
    }
    ric.with_symmetry(Symmetry::Symmetric(0, 1))
}

pub fn curvature_tensors(metric: &ZeroShiftMetric) -> Curvature {
    let gamma = christoffel_zero_shift(metric);
    curvature_from(&metric.g, &gamma)
}

pub fn curvature_from(g: &TensorField, gamma: &TensorField) -> Curvature {
    let riemann = riemann_from(g, gamma);
    let ginv = invert_metric(g);
    let ricci = ricci_from(&riemann, &ginv);
    let kappa = kulkarni_nomizu(g, g).scaled(0.5);
    let mut e = riemann.clone();
    for (ec, kc) in e.comps.iter_mut().zip(&kappa.comps) {
        ec.iter_mut().zip(kc).for_each(|(a, b)| *a += b);
    }
    Curvature {
        riemann,
        ricci,
        kappa,
        e,
    }
}

/// Sectional curvature of the coordinate plane `(∂_i, ∂_j)`.
pub fn sectional(riemann: &TensorField, g: &TensorField, i: usize, j: usize, p: usize) -> f64 {
    let num = riemann.at(p, &[i, j, i, j]);
    let den = g.at(p, &[i, i]) * g.at(p, &[j, j]) - g.at(p, &[i, j]).powi(2);
    num / den
}

/// `(A∧B)_{ijkl} = A_{ik}B_{jl} + A_{jl}B_{ik} − A_{il}B_{jk} − A_{jk}B_{il}`.
pub fn kulkarni_nomizu(a: &TensorField, b: &TensorField) -> TensorField {
    let grid = a.grid;
    let d = grid.dim();
    let mut out = TensorField::covariant(grid, 4, a.weight + b.weight);
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for l in 0..d {
                    let c = ((i * d + j) * d + k) * d + l;
                    let (ik, jl, il, jk) = (i * d + k, j * d + l, i * d + l, j * d + k);
                    for p in 0..grid.len() {
                        out.comps[c][p] = a.comps[ik][p] * b.comps[jl][p]
                            + a.comps[jl][p] * b.comps[ik][p]
                            - a.comps[il][p] * b.comps[jk][p]
                            - a.comps[jk][p] * b.comps[il][p];
                    }
                }
            }
        }
    }
    out.symmetries = vec![Symmetry::Antisymmetric(0, 1), Symmetry::Antisymmetric(2, 3)];
    out
}

/// `Hess_{ij}φ = ∂_i∂_jφ − Γ^k_{ij}∂_kφ`.
pub fn hessian_with(gamma: &TensorField, phi: &ScalarField) -> TensorField {
    let grid = phi.grid;
    let d = grid.dim();
    let dphi: Vec<Vec<f64>> = (0..d).map(|a| phi.d(a)).collect();
    let mut h = TensorField::covariant(grid, 2, phi.weight);
    for i in 0..d {
        for j in i..d {
            let dd = phi.dd(i, j);
            let vals: Vec<f64> = (0..grid.len())
                .map(|p| {
                    let mut v = dd[p];
                    for k in 0..d {
                        v -= gamma.comps[(k * d + i) * d + j][p] * dphi[k][p];
                    }
                    v
                })
                .collect();
            h.comps[j * d + i] = vals.clone();
            h.comps[i * d + j] = vals;
        }
    }
    h.symmetries.push(Symmetry::Symmetric(0, 1));
    h
}

pub fn hessian_scalar(metric: &ZeroShiftMetric, phi: &ScalarField) -> TensorField {
    hessian_with(&christoffel_zero_shift(metric), phi)
}

/// Trace `g^{ij}A_{ij}` of a rank-2 field.
pub fn trace(ginv: &TensorField, a: &TensorField) -> ScalarField {
    let grid = a.grid;
    let d = grid.dim();
    let values = (0..grid.len())
        .map(|p| (0..d * d).map(|c| ginv.comps[c][p] * a.comps[c][p]).sum())
        .collect();
    ScalarField {
        grid,
        values,
        weight: a.weight,
    }
}

pub fn laplacian(metric: &ZeroShiftMetric, phi: &ScalarField) -> ScalarField {
    trace(&metric.inverse(), &hessian_scalar(metric, phi))
}

/// `g^{ij}∂_iu∂_jv`.
pub fn inner_gradient(ginv: &TensorField, du: &[Vec<f64>], dv: &[Vec<f64>]) -> Vec<f64> {
    let d = du.len();
    (0..du[0].len())
        .map(|p| {
            let mut s = 0.0;
            for i in 0..d {
                for j in 0..d {
                    s += ginv.comps[i * d + j][p] * du[i][p] * dv[j][p];
                }
            }
            s
        })
        .collect()
}

/// Hessian of `φ` in `ḡ = e^{−2w}g`:
/// `Hess_{ij}φ + ∂_iw∂_jφ + ∂_iφ∂_jw − ⟨dw,dφ⟩g_{ij}`.
pub fn conformal_hessian(
    metric: &ZeroShiftMetric,
    w_field: &ScalarField,
    phi: &ScalarField,
) -> TensorField {
    let gamma = christoffel_zero_shift(metric);
    conformal_hessian_with(&metric.g, &metric.inverse(), &gamma, w_field, phi)
}

pub fn conformal_hessian_with(
    g: &TensorField,
    ginv: &TensorField,
    gamma: &TensorField,
    w_field: &ScalarField,
    phi: &ScalarField,
) -> TensorField {
    let grid = phi.grid;
    let d = grid.dim();
    let hess = hessian_with(gamma, phi);
    let dw: Vec<Vec<f64>> = (0..d).map(|a| w_field.d(a)).collect();
    let dphi: Vec<Vec<f64>> = (0..d).map(|a| phi.d(a)).collect();
    let ip = inner_gradient(ginv, &dw, &dphi);
    let mut out = hess;
    for i in 0..d {
        for j in 0..d {
            let c = i * d + j;
            for p in 0..grid.len() {
                out.comps[c][p] +=
                    dw[i][p] * dphi[j][p] + dphi[i][p] * dw[j][p] - ip[p] * g.comps[c][p];
            }
        }
    }
    out
}

/// Riemann tensor (4,0) of `ḡ = t⁻²g`:
/// `t⁻²(R + (Hess t/t)∧g − ½|dt/t|²g∧g)`.
pub fn conformal_riemann(metric: &ZeroShiftMetric, t: &ScalarField) -> Result<TensorField> {
    let gamma = christoffel_zero_shift(metric);
    let curv = curvature_from(&metric.g, &gamma);
    conformal_riemann_with(&metric.g, &metric.inverse(), &gamma, &curv.riemann, t)
}

pub fn conformal_riemann_with(
    g: &TensorField,
    ginv: &TensorField,
    gamma: &TensorField,
    riemann: &TensorField,
    t: &ScalarField,
) -> Result<TensorField> {
    if let Some(p) = t.values.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Domain(format!(
            "conformal factor t not positive at point {p}"
        )));
    }
    let grid = t.grid;
    let d = grid.dim();
    let np = grid.len();
    let hess = hessian_with(gamma, t);
    let mut a = TensorField::covariant(grid, 2, 0.0);
    for c in 0..d * d {
        a.comps[c] = (0..np).map(|p| hess.comps[c][p] / t.values[p]).collect();
    }
    let dt: Vec<Vec<f64>> = (0..d).map(|i| t.d(i)).collect();
    let grad2 = inner_gradient(ginv, &dt, &dt);
    let hg = kulkarni_nomizu(&a, g);
    let gg = kulkarni_nomizu(g, g);
    let mut out = TensorField::covariant(grid, 4, -2.0);
    for c in 0..d.pow(4) {
        out.comps[c] = (0..np)
            .map(|p| {
                let tt = t.values[p];
                let s = grad2[p] / (tt * tt);
                (riemann.comps[c][p] + hg.comps[c][p] - 0.5 * s * gg.comps[c][p]) / (tt * tt)
            })
            .collect();
    }
    out.symmetries = vec![Symmetry::Antisymmetric(0, 1), Symmetry::Antisymmetric(2, 3)];
    Ok(out)
}

/// Raise every index of a covariant tensor at one point.
pub fn raise_all(ginv: &[f64], comps: &[f64], rank: usize, d: usize) -> Vec<f64> {
    let mut cur = comps.to_vec();
    for slot in 0..rank {
        let inner = d.pow((rank - 1 - slot) as u32);
        let mut next = vec![0.0; cur.len()];
        for c in 0..cur.len() {
            let i = (c / inner) % d;
            let base = c - i * inner;
            let mut s = 0.0;
            for m in 0..d {
                s += ginv[i * d + m] * cur[base + m * inner];
            }
            next[c] = s;
        }
        cur = next;
    }
    cur
}

/// Pointwise norm `|A|_g` of a covariant tensor field.
pub fn norm_g(a: &TensorField, ginv: &TensorField) -> Vec<f64> {
    let d = a.dim();
    let k = a.rank();
    (0..a.grid.len())
        .map(|p| {
            let gi: Vec<f64> = ginv.comps.iter().map(|c| c[p]).collect();
            let lower = a.point_values(p);
            let upper = raise_all(&gi, &lower, k, d);
            lower
                .iter()
                .zip(&upper)
                .map(|(x, y)| x * y)
                .sum::<f64>()
                .max(0.0)
                .sqrt()
        })
        .collect()
}

/// `∇_k g_{ij}` computed with finite differences; vanishes up to truncation
/// error when `gamma` belongs to `g`.
pub fn metric_compatibility_defect(g: &TensorField, gamma: &TensorField) -> TensorField {
    let grid = g.grid;
    let d = grid.dim();
    let mut out = TensorField::covariant(grid, 3, 0.0);
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                let dg = g.d_comp(&[i, j], k);
                let c = (k * d + i) * d + j;
                for p in 0..grid.len() {
                    let mut v = dg[p];
                    for l in 0..d {
                        v -= gamma.comps[(l * d + k) * d + i][p] * g.comps[l * d + j][p]
                            + gamma.comps[(l * d + k) * d + j][p] * g.comps[i * d + l][p];
                    }
                    out.comps[c][p] = v;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ReportingRegion;
    use crate::metric_zoo;

    fn hyperbolic(n: usize) -> ZeroShiftMetric {
        let grid = HalfSpaceGrid::build(n, 0.0, 4.0, 41, 2.0, 17).unwrap();
        metric_zoo::make_hyperbolic(&grid)
    }

    fn interior(grid: &HalfSpaceGrid) -> Vec<usize> {
        ReportingRegion::of(grid).unwrap().points(grid)
    }

    /// Metric with every component varying, sampled analytically.
    fn wobbly(grid: HalfSpaceGrid) -> ZeroShiftMetric {
        let lapse = ScalarField::from_fn(grid, 0.0, |c| {
            1.0 + 0.2 * (0.7 * c[0]).sin() * (1.1 * c[1]).cos()
        });
        let mut gt = TensorField::covariant(grid, 2, 0.0);
        for p in 0..grid.len() {
            let c = grid.point(p);
            let e = (2.0 * c[0]).exp();
            gt.comps[grid.dim() + 1][p] = e * (1.0 + 0.3 * (c[1] + 0.4 * c[0]).sin().powi(2));
            if grid.n == 2 {
                let x2 = c[2];
                gt.comps[5][p] = 0.1 * e * (x2 - 0.2 * c[1]).cos();
                gt.comps[7][p] = gt.comps[5][p];
                gt.comps[8][p] = e * (1.0 + 0.2 * (x2 * c[0]).cos());
            }
        }
        ZeroShiftMetric::new(lapse, &gt).unwrap()
    }

    #[test]
    fn hyperbolic_christoffel_exact() {
        let m = hyperbolic(2);
        let gamma = christoffel_zero_shift(&m);
        let d = 3;
        for p in 0..m.grid.len() {
            let w = m.grid.point(p)[0];
            for k in 0..d {
                for i in 0..d {
                    for j in 0..d {
                        let exact = if k == 0 && i > 0 && i == j {
                            -(2.0 * w).exp()
                        } else if k > 0 && ((i == 0 && j == k) || (j == 0 && i == k)) {
                            1.0
                        } else {
                            0.0
                        };
                        let got = gamma.at(p, &[k, i, j]);
                        assert!(
                            (got - exact).abs() <= 1e-10 * exact.abs().max(1.0),
                            "{k}{i}{j}: {got} vs {exact}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn lapse_christoffel_second_order() {
        let mut errs = Vec::new();
        for nw in [41, 81, 161] {
            let grid = HalfSpaceGrid::build(1, 0.0, 4.0, nw, 2.0, 9).unwrap();
            let lapse = ScalarField::from_fn(grid, 0.0, |c| 1.0 + (-2.0 * c[0]).exp());
            let gt = metric_zoo::make_hyperbolic(&grid).g;
            let m = ZeroShiftMetric::new(lapse, &gt).unwrap();
            let gamma = christoffel_zero_shift(&m);
            let err = interior(&grid)
                .into_iter()
                .map(|p| {
                    let w = grid.point(p)[0];
                    let e = (-2.0 * w).exp();
                    (gamma.at(p, &[0, 0, 0]) + 2.0 * e / (1.0 + e)).abs()
                })
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for pair in errs.windows(2) {
            let r = pair[0] / pair[1];
            assert!((3.5..=4.5).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn closed_forms_match_generic_christoffel() {
        for n in [1, 2] {
            let grid = HalfSpaceGrid::build(n, 0.0, 2.0, 17, 1.0, 13).unwrap();
            let m = wobbly(grid);
            let d = n + 1;
            let closed = christoffel_zero_shift(&m);
            // same partials as the closed forms: ∂g₀₀ = 2N∂N, ∂g_{μν} by differences
            let dg: Vec<Vec<Vec<f64>>> = (0..d)
                .map(|c| {
                    let dn = m.lapse.d(c);
                    (0..d * d)
                        .map(|ab| match (ab / d, ab % d) {
                            (0, 0) => dn
                                .iter()
                                .zip(&m.lapse.values)
                                .map(|(a, b)| 2.0 * a * b)
                                .collect(),
                            (0, _) | (_, 0) => vec![0.0; grid.len()],
                            (a, b) => m.g.d_comp(&[a, b], c),
                        })
                        .collect()
                })
                .collect();
            let generic = christoffel_from_partials(&m.inverse(), &dg);
            for c in 0..d * d * d {
                for p in 0..grid.len() {
                    let (a, b) = (closed.comps[c][p], generic.comps[c][p]);
                    assert!(
                        (a - b).abs() <= 1e-10 * (1.0 + b.abs()),
                        "n={n} comp {c}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn hyperbolic_curvature_is_model() {
        for n in [1, 2] {
            let m = hyperbolic(n);
            let curv = curvature_tensors(&m);
            let norms = norm_g(&curv.e, &m.inverse());
            for p in interior(&m.grid) {
                assert!(norms[p] <= 1e-6, "|E| = {}", norms[p]);
            }
            let ric = &curv.ricci;
            for p in interior(&m.grid) {
                for c in 0..(n + 1) * (n + 1) {
                    let expect = -(n as f64) * m.g.comps[c][p];
                    assert!((ric.comps[c][p] - expect).abs() <= 1e-6 * (1.0 + expect.abs()));
                }
            }
        }
    }

    #[test]
    fn riemann_symmetries_and_bianchi() {
        let grid = HalfSpaceGrid::build(2, 0.0, 2.0, 17, 1.0, 13).unwrap();
        let m = wobbly(grid);
        let r = curvature_tensors(&m).riemann;
        let d = 3;
        let mut bianchi: f64 = 0.0;
        let mut scale: f64 = 0.0;
        let reg = ReportingRegion {
            w_lo: 0.5,
            w_hi: 1.5,
            x_half: 0.5,
        };
        for p in reg.points(&grid) {
            for a in 0..d {
                for b in 0..d {
                    for c in 0..d {
                        for e in 0..d {
                            let v = r.at(p, &[a, b, c, e]);
                            scale = scale.max(v.abs());
                            assert!((v + r.at(p, &[b, a, c, e])).abs() <= 1e-8);
                            assert!((v + r.at(p, &[a, b, e, c])).abs() <= 1e-8);
                            assert!((v - r.at(p, &[c, e, a, b])).abs() <= 1e-8);
                            bianchi = bianchi
                                .max((v + r.at(p, &[a, c, e, b]) + r.at(p, &[a, e, b, c])).abs());
                        }
                    }
                }
            }
        }
        assert!(
            bianchi <= 0.05 * scale,
            "Bianchi defect {bianchi} vs scale {scale}"
        );
    }

    #[test]
    fn flat_product_has_zero_curvature() {
        let grid = HalfSpaceGrid::build(2, 0.0, 2.0, 17, 1.0, 9).unwrap();
        let lapse = ScalarField::constant(grid, 1.0);
        let mut gt = TensorField::covariant(grid, 2, 0.0);
        gt.index_weight = 0.0;
        gt.comps[4] = vec![1.0; grid.len()];
        gt.comps[8] = vec![1.0; grid.len()];
        let m = ZeroShiftMetric::new(lapse, &gt).unwrap();
        let curv = curvature_tensors(&m);
        assert!(curv.riemann.max_abs() == 0.0);
        assert_eq!(
            curv.e,
            TensorField {
                weight: curv.e.weight,
                ..curv.kappa.clone()
            }
        );
    }

    #[test]
    fn kulkarni_nomizu_identities() {
        let m = hyperbolic(2);
        let curv = curvature_tensors(&m);
        let half_gg = kulkarni_nomizu(&m.g, &m.g).scaled(0.5);
        assert_eq!(half_gg.comps, curv.kappa.comps);
        let zero = TensorField::covariant(m.grid, 2, 0.0);
        assert_eq!(kulkarni_nomizu(&zero, &m.g).max_abs(), 0.0);
    }

    #[test]
    fn hessian_of_exponential_in_model() {
        let m = hyperbolic(1);
        let phi = ScalarField::from_fn(m.grid, 1.0, |c| c[0].exp());
        let h = hessian_scalar(&m, &phi);
        for p in 0..m.grid.len() {
            for c in 0..4 {
                let expect = phi.values[p] * m.g.comps[c][p];
                assert!((h.comps[c][p] - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
            }
        }
        let c = ScalarField::constant(m.grid, 3.0);
        assert_eq!(hessian_scalar(&m, &c).max_abs(), 0.0);
    }

    /// `(1/√det g) ∂_i(√det g g^{ij} ∂_j φ)` assembled with nested differences.
    fn divergence_laplacian(m: &ZeroShiftMetric, phi: &ScalarField) -> Vec<f64> {
        let grid = m.grid;
        let d = grid.dim();
        let ginv = m.inverse();
        let vol: Vec<f64> = (0..grid.len())
            .map(|p| matrix_at(&m.g, p).determinant().sqrt())
            .collect();
        let dphi: Vec<Vec<f64>> = (0..d).map(|a| phi.d(a)).collect();
        let mut out = vec![0.0; grid.len()];
        for i in 0..d {
            let flux: Vec<f64> = (0..grid.len())
                .map(|p| {
                    vol[p]
                        * (0..d)
                            .map(|j| ginv.comps[i * d + j][p] * dphi[j][p])
                            .sum::<f64>()
                })
                .collect();
            let weight = if i == 0 {
                phi.weight + grid.n as f64
            } else {
                phi.weight + grid.n as f64 - 2.0
            };
            let df = crate::fd::d1(&grid, &flux, i, weight);
            out.iter_mut().zip(df).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().zip(&vol).for_each(|(o, v)| *o /= v);
        out
    }

    #[test]
    fn laplacian_matches_divergence_form() {
        let mut errs = Vec::new();
        for (nw, nx) in [(21, 17), (41, 33), (81, 65)] {
            let grid = HalfSpaceGrid::build(1, 0.0, 2.0, nw, 1.0, nx).unwrap();
            let m = wobbly(grid);
            let phi =
                ScalarField::from_fn(grid, 0.0, |c| (0.8 * c[0]).cos() * (1.2 * c[1] + 0.3).sin());
            let a = laplacian(&m, &phi);
            let b = divergence_laplacian(&m, &phi);
            let reg = ReportingRegion {
                w_lo: 0.5,
                w_hi: 1.5,
                x_half: 0.5,
            };
            let err = reg
                .points(&grid)
                .into_iter()
                .map(|p| (a.values[p] - b[p]).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(
            errs[1] < errs[0] / 3.0 && errs[2] < errs[1] / 3.0,
            "{errs:?}"
        );

        let m = hyperbolic(1);
        let x1 = ScalarField::from_fn(m.grid, 0.0, |c| c[1]);
        assert!(laplacian(&m, &x1).values.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn conformal_hessian_of_w_in_model() {
        let m = hyperbolic(2);
        let w = ScalarField::from_fn(m.grid, 0.0, |c| c[0]);
        let h = conformal_hessian(&m, &w, &w);
        for p in 0..m.grid.len() {
            for a in 1..3 {
                for b in 1..3 {
                    assert!(h.at(p, &[a, b]).abs() <= 1e-8 * m.g.at(p, &[1, 1]));
                }
            }
        }
        let c = ScalarField::constant(m.grid, 2.0);
        assert_eq!(conformal_hessian(&m, &w, &c).max_abs(), 0.0);
    }

    #[test]
    fn conformal_hessian_matches_direct_computation() {
        // ḡ = e^{−2u}g is again zero-shift, so its Hessian can be taken directly.
        let mut errs = Vec::new();
        for (nw, nx) in [(21, 17), (41, 33), (81, 65)] {
            let grid = HalfSpaceGrid::build(1, 0.0, 2.0, nw, 1.0, nx).unwrap();
            let m = wobbly(grid);
            let u = ScalarField::from_fn(grid, 0.0, |c| 0.3 * c[0] + 0.1 * (c[1] * 2.0).sin());
            let phi = ScalarField::from_fn(grid, 0.0, |c| (c[0] - c[1]).sin() + 0.2 * c[1] * c[1]);
            let a = conformal_hessian(&m, &u, &phi);
            let factor: Vec<f64> = u.values.iter().map(|v| (-v).exp()).collect();
            let lapse = ScalarField {
                grid,
                values: m
                    .lapse
                    .values
                    .iter()
                    .zip(&factor)
                    .map(|(n, f)| n * f)
                    .collect(),
                weight: 0.0,
            };
            let mut gt = m.g.clone();
            for c in gt.comps.iter_mut() {
                c.iter_mut().zip(&factor).for_each(|(v, f)| *v *= f * f);
            }
            let mbar = ZeroShiftMetric::new(lapse, &gt).unwrap();
            let b = hessian_scalar(&mbar, &phi);
            let reg = ReportingRegion {
                w_lo: 0.5,
                w_hi: 1.5,
                x_half: 0.5,
            };
            let err = reg
                .points(&grid)
                .into_iter()
                .flat_map(|p| (0..4).map(move |c| (p, c)))
                .map(|(p, c)| (a.comps[c][p] - b.comps[c][p]).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(
            errs[1] < errs[0] / 3.0 && errs[2] < errs[1] / 3.0,
            "{errs:?}"
        );
    }

    #[test]
    fn conformal_riemann_flat_compactification() {
        let m = hyperbolic(2);
        let t = ScalarField::from_fn(m.grid, 1.0, |c| c[0].exp());
        let rbar = conformal_riemann(&m, &t).unwrap();
        let norms = norm_g(&rbar, &m.inverse());
        for p in interior(&m.grid) {
            assert!(norms[p] * t.values[p].powi(2) <= 1e-5);
        }
        let one = ScalarField::constant(m.grid, 1.0);
        let r1 = conformal_riemann(&m, &one).unwrap();
        let r = curvature_tensors(&m).riemann;
        for c in 0..81 {
            for p in 0..m.grid.len() {
                assert!(
                    (r1.comps[c][p] - r.comps[c][p]).abs() <= 1e-12 * (1.0 + r.comps[c][p].abs())
                );
            }
        }
        let neg = ScalarField::constant(m.grid, -1.0);
        assert!(conformal_riemann(&m, &neg).is_err());
    }

    #[test]
    fn metric_compatibility() {
        let mut errs = Vec::new();
        for (nw, nx) in [(21, 17), (41, 33), (81, 65)] {
            let grid = HalfSpaceGrid::build(1, 0.0, 2.0, nw, 1.0, nx).unwrap();
            let m = wobbly(grid);
            let defect = metric_compatibility_defect(&m.g, &christoffel_zero_shift(&m));
            let reg = ReportingRegion {
                w_lo: 0.5,
                w_hi: 1.5,
                x_half: 0.5,
            };
            let err = reg
                .points(&grid)
                .into_iter()
                .map(|p| {
                    defect
                        .point_values(p)
                        .iter()
                        .fold(0.0f64, |m, v| m.max(v.abs()))
                        / m.g.at(p, &[1, 1])
                })
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for pair in errs.windows(2) {
            let r = pair[0] / pair[1];
            assert!((3.5..=4.5).contains(&r), "ratio {r} {errs:?}");
        }
    }
}
