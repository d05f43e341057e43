//! Numerical laboratory for the conformal compactification of asymptotically
//! locally hyperbolic metrics.
//!
//! The pipeline takes a model metric in zero-shift form `g = N²dw² + g_w`,
//! solves for the radial eigenfunction `t` with `Δt = (n+1)t`, builds harmonic
//! coordinates `y^μ` near infinity, forms the compactified metric `ḡ = t⁻²g`
//! in `(ρ = 1/t, y)` and measures decay rates and Hölder exponents.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod codazzi;
pub mod conformal_factor;
pub mod elliptic;
pub mod error;
pub mod fd;
pub mod field;
pub mod grid;
pub mod harmonic_charts;
pub mod harness;
pub mod metric_zoo;
pub mod regularity;
pub mod riccati;
pub mod sparse;
pub mod tensor_core;
pub mod window_norms;

pub use error::{Error, Result};
pub use field::{ScalarField, Slot, Symmetry, TensorField};
pub use grid::{HalfSpaceGrid, ReportingRegion};
pub use tensor_core::ZeroShiftMetric;
