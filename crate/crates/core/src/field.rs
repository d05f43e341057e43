//! Scalar and tensor fields sampled on a [`HalfSpaceGrid`].
//!
//! Every field carries a radial weight `k`: its values are expected to grow
//! roughly like `e^{k w}`. Finite differences along `w` act on `e^{−k w}·v`,
//! which makes exponential model data exact up to rounding. A tensor
//! component gains `+1` per lower tangential index and `−1` per upper one on
//! top of the field's base weight, so `g_{μν}` of the hyperbolic metric has
//! weight 2 and `Γ^μ_{0ν}` weight 0.

use crate::error::{Error, Result};
use crate::fd;
use crate::grid::HalfSpaceGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: HalfSpaceGrid,
    pub values: Vec<f64>,
    pub weight: f64,
}

impl ScalarField {
    pub fn new(grid: HalfSpaceGrid, values: Vec<f64>, weight: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Data(format!(
                "{} values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at point {p}")));
        }
        Ok(ScalarField {
            grid,
            values,
            weight,
        })
    }

    pub fn from_fn(grid: HalfSpaceGrid, weight: f64, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|p| f(&grid.point(p)[..=grid.n]))
            .collect();
        ScalarField {
            grid,
            values,
            weight,
        }
    }

    pub fn constant(grid: HalfSpaceGrid, c: f64) -> Self {
        ScalarField {
            grid,
            values: vec![c; grid.len()],
            weight: 0.0,
        }
    }

    /// First partial derivative along `axis`.
    pub fn d(&self, axis: usize) -> Vec<f64> {
        fd::d1(&self.grid, &self.values, axis, self.weight)
    }

    /// Second partial derivative along `a` and `b`.
    pub fn dd(&self, a: usize, b: usize) -> Vec<f64> {
        fd::d2(&self.grid, &self.values, a, b, self.weight)
    }

    pub fn map(&self, weight: f64, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
            weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symmetry {
    Symmetric(usize, usize),
    Antisymmetric(usize, usize),
}

/// Rank-k tensor field. Components are stored for every multi-index in
/// `0..dim`, flattened with the first index slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub grid: HalfSpaceGrid,
    pub slots: Vec<Slot>,
    pub comps: Vec<Vec<f64>>,
    pub symmetries: Vec<Symmetry>,
    pub weight: f64,
    /// Weight contributed by each tangential index: `+index_weight` when
    /// lower, `−index_weight` when upper. Zero for fields with no radial
    /// growth such as metrics on a flat product.
    pub index_weight: f64,
}

impl TensorField {
    pub fn zeros(grid: HalfSpaceGrid, slots: Vec<Slot>, weight: f64) -> Self {
        let count = grid.dim().pow(slots.len() as u32);
        TensorField {
            grid,
            slots,
            comps: vec![vec![0.0; grid.len()]; count],
            symmetries: Vec::new(),
            weight,
            index_weight: 1.0,
        }
    }

    pub fn covariant(grid: HalfSpaceGrid, rank: usize, weight: f64) -> Self {
        Self::zeros(grid, vec![Slot::Lower; rank], weight)
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        let d = self.dim();
        idx.iter().fold(0, |acc, &i| acc * d + i)
    }

    pub fn multi(&self, mut c: usize) -> Vec<usize> {
        let d = self.dim();
        let mut idx = vec![0; self.rank()];
        for slot in (0..self.rank()).rev() {
            idx[slot] = c % d;
            c /= d;
        }
        idx
    }

    pub fn comp(&self, idx: &[usize]) -> &[f64] {
        &self.comps[self.flat(idx)]
    }

    pub fn comp_mut(&mut self, idx: &[usize]) -> &mut Vec<f64> {
        let c = self.flat(idx);
        &mut self.comps[c]
    }

    pub fn at(&self, p: usize, idx: &[usize]) -> f64 {
        self.comps[self.flat(idx)][p]
    }

    /// Radial weight of a component.
    pub fn comp_weight(&self, idx: &[usize]) -> f64 {
        let mut k = self.weight;
        for (slot, &i) in self.slots.iter().zip(idx) {
            if i > 0 {
                k += match slot {
                    Slot::Lower => self.index_weight,
                    Slot::Upper => -self.index_weight,
                };
            }
        }
        k
    }

    /// Partial derivative of one component along `axis`.
    pub fn d_comp(&self, idx: &[usize], axis: usize) -> Vec<f64> {
        fd::d1(&self.grid, self.comp(idx), axis, self.comp_weight(idx))
    }

    /// Declare and enforce a symmetry by projecting the components onto it.
    pub fn with_symmetry(mut self, s: Symmetry) -> Self {
        self.enforce(s);
        self.symmetries.push(s);
        self
    }

    fn enforce(&mut self, s: Symmetry) {
        let (a, b, sign) = match s {
            Symmetry::Symmetric(a, b) => (a, b, 1.0),
            Symmetry::Antisymmetric(a, b) => (a, b, -1.0),
        };
        for c in 0..self.comps.len() {
            let idx = self.multi(c);
            let mut swapped = idx.clone();
            swapped.swap(a, b);
            let c2 = self.flat(&swapped);
            if c2 < c {
                continue;
            }
            if c2 == c {
                if sign < 0.0 {
                    self.comps[c].iter_mut().for_each(|v| *v = 0.0);
                }
                continue;
            }
            for p in 0..self.grid.len() {
                let u = self.comps[c][p];
                let v = self.comps[c2][p];
                let m = 0.5 * (u + sign * v);
                self.comps[c][p] = m;
                self.comps[c2][p] = sign * m;
            }
        }
    }

    /// Largest violation of the declared symmetries.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for &s in &self.symmetries {
            let (a, b, sign) = match s {
                Symmetry::Symmetric(a, b) => (a, b, 1.0),
                Symmetry::Antisymmetric(a, b) => (a, b, -1.0),
            };
            for c in 0..self.comps.len() {
                let mut swapped = self.multi(c);
                swapped.swap(a, b);
                let c2 = self.flat(&swapped);
                for p in 0..self.grid.len() {
                    worst = worst.max((self.comps[c][p] - sign * self.comps[c2][p]).abs());
                }
            }
        }
        worst
    }

    pub fn scaled(&self, c: f64) -> TensorField {
        let mut out = self.clone();
        out.comps.iter_mut().flatten().for_each(|v| *v *= c);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Components at one point, in storage order.
    pub fn point_values(&self, p: usize) -> Vec<f64> {
        self.comps.iter().map(|c| c[p]).collect()
    }
}
