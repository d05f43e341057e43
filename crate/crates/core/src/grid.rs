//! Structured grids on `[w0, w_max] × [−L, L]ⁿ`.
//!
//! Points are ordered with `w` slowest and the tangential axes in
//! lexicographic order after it, so the flat index of `(iw, i1, …, in)` is
//! `((iw·Nx + i1)·Nx + i2)…`. Axis 0 is radial, axes `1..=n` tangential.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceGrid {
    pub n: usize,
    pub w0: f64,
    pub w_max: f64,
    pub nw: usize,
    pub half_width: f64,
    pub nx: usize,
}

impl HalfSpaceGrid {
    pub fn build(
        n: usize,
        w0: f64,
        w_max: f64,
        nw: usize,
        half_width: f64,
        nx: usize,
    ) -> Result<Self> {
        if n == 0 || n > 3 {
            return Err(Error::Config(format!(
                "boundary dimension n = {n} must be 1, 2 or 3"
            )));
        }
        if !(w0.is_finite() && w_max.is_finite()) || w_max <= w0 {
            return Err(Error::Config(format!(
                "need w_max > w0, got [{w0}, {w_max}]"
            )));
        }
        if nw < 8 || nx < 8 {
            return Err(Error::Config(format!(
                "need Nw ≥ 8 and Nx ≥ 8, got {nw}, {nx}"
            )));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Config(format!(
                "half-width must be positive, got {half_width}"
            )));
        }
        Ok(HalfSpaceGrid {
            n,
            w0,
            w_max,
            nw,
            half_width,
            nx,
        })
    }

    /// Spacetime dimension `n + 1`.
    pub fn dim(&self) -> usize {
        self.n + 1
    }

    pub fn dw(&self) -> f64 {
        (self.w_max - self.w0) / (self.nw - 1) as f64
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / (self.nx - 1) as f64
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.dw()
        } else {
            self.dx()
        }
    }

    pub fn axis_len(&self, axis: usize) -> usize {
        if axis == 0 {
            self.nw
        } else {
            self.nx
        }
    }

    pub fn slice_len(&self) -> usize {
        self.nx.pow(self.n as u32)
    }

    pub fn len(&self) -> usize {
        self.nw * self.slice_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            self.slice_len()
        } else {
            self.nx.pow((self.n - axis) as u32)
        }
    }

    pub fn w(&self, iw: usize) -> f64 {
        self.w0 + iw as f64 * self.dw()
    }

    pub fn x(&self, ix: usize) -> f64 {
        -self.half_width + ix as f64 * self.dx()
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if axis == 0 {
            self.w(i)
        } else {
            self.x(i)
        }
    }

    /// Per-axis indices of a flat point index.
    pub fn unflatten(&self, mut p: usize) -> [usize; 4] {
        let mut idx = [0usize; 4];
        for axis in (1..=self.n).rev() {
            idx[axis] = p % self.nx;
            p /= self.nx;
        }
        idx[0] = p;
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        let mut p = idx[0];
        for &i in &idx[1..=self.n] {
            p = p * self.nx + i;
        }
        p
    }

    /// Coordinates `(w, x¹, …, xⁿ)` of a flat point index.
    pub fn point(&self, p: usize) -> [f64; 4] {
        let idx = self.unflatten(p);
        let mut c = [0.0; 4];
        for axis in 0..=self.n {
            c[axis] = self.coord(axis, idx[axis]);
        }
        c
    }

    /// Index of the grid row closest to `w`.
    pub fn nearest_w(&self, w: f64) -> usize {
        let i = ((w - self.w0) / self.dw()).round();
        i.clamp(0.0, (self.nw - 1) as f64) as usize
    }

    /// Same spacings on a taller and wider box, used by truncation sweeps.
    pub fn enlarged(&self, extra_w: f64, extra_half_width: f64) -> HalfSpaceGrid {
        let dw = self.dw();
        let dx = self.dx();
        let add_w = (extra_w / dw).round() as usize;
        let add_x = (extra_half_width / dx).round() as usize;
        let half_width = self.half_width + add_x as f64 * dx;
        HalfSpaceGrid {
            n: self.n,
            w0: self.w0,
            w_max: self.w0 + (self.nw - 1 + add_w) as f64 * dw,
            nw: self.nw + add_w,
            half_width,
            nx: self.nx + 2 * add_x,
        }
    }

    /// Grid with both spacings halved on the same box.
    pub fn refined(&self) -> HalfSpaceGrid {
        HalfSpaceGrid {
            nw: 2 * self.nw - 1,
            nx: 2 * self.nx - 1,
            ..*self
        }
    }
}

/// Sub-box of a grid away from the truncation faces where results are reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportingRegion {
    pub w_lo: f64,
    pub w_hi: f64,
    pub x_half: f64,
}

/// Width of the band next to each truncation face excluded from reporting.
pub const REPORT_BUFFER: f64 = 1.0;

impl ReportingRegion {
    pub fn of(grid: &HalfSpaceGrid) -> Result<Self> {
        let r = ReportingRegion {
            w_lo: grid.w0 + REPORT_BUFFER,
            w_hi: grid.w_max - REPORT_BUFFER,
            x_half: grid.half_width - REPORT_BUFFER,
        };
        if r.w_hi <= r.w_lo || r.x_half < 0.0 {
            return Err(Error::Range(format!(
                "grid [{}, {}] × [−{}, {}] leaves no reporting region",
                grid.w0, grid.w_max, grid.half_width, grid.half_width
            )));
        }
        Ok(r)
    }

    pub fn contains(&self, c: &[f64], n: usize) -> bool {
        let eps = 1e-9;
        c[0] >= self.w_lo - eps
            && c[0] <= self.w_hi + eps
            && c[1..=n].iter().all(|x| x.abs() <= self.x_half + eps)
    }

    /// Flat indices of grid points inside the region, in grid order.
    pub fn points(&self, grid: &HalfSpaceGrid) -> Vec<usize> {
        (0..grid.len())
            .filter(|&p| self.contains(&grid.point(p), grid.n))
            .collect()
    }

    /// Flat indices of points inside the region on grid row `iw`.
    pub fn row_points(&self, grid: &HalfSpaceGrid, iw: usize) -> Vec<usize> {
        let base = iw * grid.slice_len();
        (base..base + grid.slice_len())
            .filter(|&p| {
                let c = grid.point(p);
                c[1..=grid.n].iter().all(|x| x.abs() <= self.x_half + 1e-9)
            })
            .collect()
    }

    /// Fit stations `w_lo + 1, w_lo + 2, …` up to `w_hi`.
    pub fn stations(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut w = self.w_lo + 1.0;
        while w <= self.w_hi + 1e-9 {
            out.push(w);
            w += 1.0;
        }
        out
    }
}
