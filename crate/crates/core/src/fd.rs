//! Second-order finite differences on structured grids.
//!
//! Centered stencils in the interior, one-sided second-order stencils on the
//! first and last node of each line. Along the radial axis a weight `k` is
//! honored: the stencil acts on `u = e^{−k(w−w_i)}v` and the result is mapped
//! back through `∂v = k v + u′`, `∂²v = k² v + 2k u′ + u″`.

use crate::grid::HalfSpaceGrid;

/// Visit every grid line along `axis` as `(first flat index, stride)`.
pub fn for_each_line(grid: &HalfSpaceGrid, axis: usize, mut f: impl FnMut(usize, usize)) {
    let stride = grid.stride(axis);
    let len = grid.axis_len(axis);
    let block = stride * len;
    for outer in (0..grid.len()).step_by(block) {
        for inner in 0..stride {
            f(outer + inner, stride);
        }
    }
}

fn first_derivative_line(
    v: &[f64],
    out: &mut [f64],
    start: usize,
    stride: usize,
    len: usize,
    h: f64,
    k: f64,
) {
    let e = (k * h).exp();
    let ei = 1.0 / e;
    let at = |i: usize| v[start + i * stride];
    for i in 0..len {
        let u = if i == 0 {
            (-3.0 * at(0) + 4.0 * at(1) * ei - at(2) * ei * ei) / (2.0 * h)
        } else if i == len - 1 {
            (3.0 * at(i) - 4.0 * at(i - 1) * e + at(i - 2) * e * e) / (2.0 * h)
        } else {
            (at(i + 1) * ei - at(i - 1) * e) / (2.0 * h)
        };
        out[start + i * stride] = k * at(i) + u;
    }
}

fn second_derivative_line(
    v: &[f64],
    out: &mut [f64],
    start: usize,
    stride: usize,
    len: usize,
    h: f64,
    k: f64,
) {
    let e = (k * h).exp();
    let ei = 1.0 / e;
    let at = |i: usize| v[start + i * stride];
    for i in 0..len {
        let (u1, u2) = if i == 0 {
            let t = [at(0), at(1) * ei, at(2) * ei * ei, at(3) * ei * ei * ei];
            (
                (-3.0 * t[0] + 4.0 * t[1] - t[2]) / (2.0 * h),
                (2.0 * t[0] - 5.0 * t[1] + 4.0 * t[2] - t[3]) / (h * h),
            )
        } else if i == len - 1 {
            let t = [
                at(i),
                at(i - 1) * e,
                at(i - 2) * e * e,
                at(i - 3) * e * e * e,
            ];
            (
                (3.0 * t[0] - 4.0 * t[1] + t[2]) / (2.0 * h),
                (2.0 * t[0] - 5.0 * t[1] + 4.0 * t[2] - t[3]) / (h * h),
            )
        } else {
            let (p, c, m) = (at(i + 1) * ei, at(i), at(i - 1) * e);
            ((p - m) / (2.0 * h), (p - 2.0 * c + m) / (h * h))
        };
        out[start + i * stride] = k * k * at(i) + 2.0 * k * u1 + u2;
    }
}

/// `∂_axis v` for values of radial weight `k`.
pub fn d1(grid: &HalfSpaceGrid, v: &[f64], axis: usize, k: f64) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    let h = grid.spacing(axis);
    let k = if axis == 0 { k } else { 0.0 };
    let len = grid.axis_len(axis);
    for_each_line(grid, axis, |start, stride| {
        first_derivative_line(v, &mut out, start, stride, len, h, k)
    });
    out
}

/// `∂_a ∂_b v` for values of radial weight `k`; mixed derivatives compose
/// two first-derivative stencils.
pub fn d2(grid: &HalfSpaceGrid, v: &[f64], a: usize, b: usize, k: f64) -> Vec<f64> {
    if a == b {
        let mut out = vec![0.0; v.len()];
        let h = grid.spacing(a);
        let k = if a == 0 { k } else { 0.0 };
        let len = grid.axis_len(a);
        for_each_line(grid, a, |start, stride| {
            second_derivative_line(v, &mut out, start, stride, len, h, k)
        });
        out
    } else {
        let (first, second) = if a == 0 { (a, b) } else { (b, a) };
        let inner = d1(grid, v, first, k);
        d1(grid, &inner, second, k)
    }
}

/// Multilinear interpolation of grid samples at an arbitrary point of the box.
pub fn interpolate(grid: &HalfSpaceGrid, v: &[f64], c: &[f64]) -> f64 {
    let n = grid.n;
    let mut base = [0usize; 4];
    let mut frac = [0.0; 4];
    for axis in 0..=n {
        let lo = if axis == 0 { grid.w0 } else { -grid.half_width };
        let h = grid.spacing(axis);
        let len = grid.axis_len(axis);
        let s = ((c[axis] - lo) / h).clamp(0.0, (len - 1) as f64);
        let i = (s.floor() as usize).min(len - 2);
        base[axis] = i;
        frac[axis] = s - i as f64;
    }
    let corners = 1usize << (n + 1);
    let mut acc = 0.0;
    for corner in 0..corners {
        let mut weight = 1.0;
        let mut idx = [0usize; 4];
        for axis in 0..=n {
            let up = (corner >> axis) & 1 == 1;
            idx[axis] = base[axis] + up as usize;
            weight *= if up { frac[axis] } else { 1.0 - frac[axis] };
        }
        if weight != 0.0 {
            acc += weight * v[grid.flatten(&idx[..=n])];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(grid: &HalfSpaceGrid, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..grid.len())
            .map(|p| {
                let c = grid.point(p);
                f(c[0], c[1])
            })
            .collect()
    }

    #[test]
    fn weighted_derivative_exact_on_exponentials() {
        let g = HalfSpaceGrid::build(1, 0.0, 10.0, 41, 1.0, 9).unwrap();
        let v = sample(&g, |w, _| (2.0 * w).exp());
        let d = d1(&g, &v, 0, 2.0);
        let dd = d2(&g, &v, 0, 0, 2.0);
        for p in 0..g.len() {
            assert!((d[p] / (2.0 * v[p]) - 1.0).abs() < 1e-13);
            assert!((dd[p] / (4.0 * v[p]) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn quadratics_differentiated_exactly() {
        let g = HalfSpaceGrid::build(2, 0.0, 1.0, 9, 1.0, 9).unwrap();
        let v: Vec<f64> = (0..g.len())
            .map(|p| {
                let c = g.point(p);
                c[0] * c[0] + 3.0 * c[0] * c[2] - c[1] * c[1] + c[1]
            })
            .collect();
        let dx1 = d1(&g, &v, 1, 0.0);
        let dwx2 = d2(&g, &v, 0, 2, 0.0);
        let dx1x1 = d2(&g, &v, 1, 1, 0.0);
        for p in 0..g.len() {
            let c = g.point(p);
            assert!((dx1[p] - (-2.0 * c[1] + 1.0)).abs() < 1e-12);
            assert!((dwx2[p] - 3.0).abs() < 1e-12);
            assert!((dx1x1[p] + 2.0).abs() < 1e-11);
        }
    }

    #[test]
    fn second_order_convergence() {
        let f = |w: f64, x: f64| (0.7 * w).sin() * (1.3 * x).cos();
        let exact = |w: f64, x: f64| -0.91 * (0.7 * w).cos() * (1.3 * x).sin();
        let mut errs = Vec::new();
        for nx in [17, 33, 65] {
            let g = HalfSpaceGrid::build(1, 0.0, 2.0, nx, 1.0, nx).unwrap();
            let v = sample(&g, f);
            let d = d2(&g, &v, 0, 1, 0.0);
            let err = (0..g.len())
                .map(|p| {
                    let c = g.point(p);
                    (d[p] - exact(c[0], c[1])).abs()
                })
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for pair in errs.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn interpolation_reproduces_bilinear() {
        let g = HalfSpaceGrid::build(1, 0.0, 1.0, 9, 1.0, 9).unwrap();
        let v = sample(&g, |w, x| 1.0 + 2.0 * w - x + 0.5 * w * x);
        let val = interpolate(&g, &v, &[0.33, -0.21]);
        assert!((val - (1.0 + 0.66 + 0.21 - 0.5 * 0.33 * 0.21)).abs() < 1e-13);
    }
}
