//! Node-indexed scalar and symmetric-matrix fields.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Grid, SpaceTimeGrid};

/// One real value per active (non-exterior) node, in slot order.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.active_len() {
            return Err(Error::param(
                "values",
                format!("expected {} values, got {}", grid.active_len(), values.len()),
            ));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: &Arc<Grid>, value: f64) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![value; grid.active_len()],
        }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Pointwise evaluation of `f` at every active node, no finiteness check.
    pub fn from_fn(grid: &Arc<Grid>, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let dim = grid.dim();
        let values = (0..grid.active_len())
            .map(|s| f(&grid.coords(s)[..dim]))
            .collect();
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_grid(other)?;
        Ok(ScalarField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_grid(&self, other: &ScalarField) -> Result<()> {
        if Grid::same(&self.grid, &other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Max-norm distance to another field on the same grid.
    pub fn max_diff(&self, other: &ScalarField) -> Result<f64> {
        self.check_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Value at the node nearest to `x`.
    pub fn at_point(&self, x: [f64; 2]) -> Option<f64> {
        self.grid.nearest_slot(x).map(|s| self.values[s])
    }
}

/// Evaluates `f` at every active node, failing on the first non-finite value.
pub fn sample_field(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Result<ScalarField> {
    sample_field_at(grid, 0.0, |x, _| f(x))
}

pub(crate) fn sample_field_at(
    grid: &Arc<Grid>,
    t: f64,
    f: impl Fn(&[f64], f64) -> f64,
) -> Result<ScalarField> {
    let dim = grid.dim();
    let mut values = Vec::with_capacity(grid.active_len());
    for s in 0..grid.active_len() {
        let x = &grid.coords(s)[..dim];
        let v = f(x, t);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                node: s,
                coords: x.to_vec(),
                value: v,
            });
        }
        values.push(v);
    }
    ScalarField::new(grid.clone(), values)
}

/// Named field presets used by configs.
///
/// Presets are functions of `(x, t)`; the elliptic pipeline evaluates at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldExpr {
    Constant { value: f64 },
    /// `peak - curvature * |x|^2`.
    Paraboloid { peak: f64, curvature: f64 },
    /// `scale * |x|^gamma`; non-finite at the origin when `gamma < 0`.
    Power {
        gamma: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `amplitude * prod_i sin(pi x_i)`, zero on the boundary of `(-1,1)^n`.
    SinProduct { amplitude: f64 },
    /// `rate * t`.
    TimeRamp { rate: f64 },
    Sum { terms: Vec<FieldExpr> },
    Scaled { factor: f64, expr: Box<FieldExpr> },
}

fn one() -> f64 {
    1.0
}

impl FieldExpr {
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        match self {
            FieldExpr::Constant { value } => *value,
            FieldExpr::Paraboloid { peak, curvature } => {
                peak - curvature * x.iter().map(|v| v * v).sum::<f64>()
            }
            FieldExpr::Power { gamma, scale } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                scale * r.powf(*gamma)
            }
            FieldExpr::SinProduct { amplitude } => {
                amplitude
                    * x.iter()
                        .map(|v| (std::f64::consts::PI * v).sin())
                        .product::<f64>()
            }
            FieldExpr::TimeRamp { rate } => rate * t,
            FieldExpr::Sum { terms } => terms.iter().map(|e| e.eval(x, t)).sum(),
            FieldExpr::Scaled { factor, expr } => factor * expr.eval(x, t),
        }
    }

    pub fn scaled(self, factor: f64) -> FieldExpr {
        FieldExpr::Scaled {
            factor,
            expr: Box::new(self),
        }
    }

    pub fn sample(&self, grid: &Arc<Grid>) -> Result<ScalarField> {
        sample_field_at(grid, 0.0, |x, t| self.eval(x, t))
    }

    pub fn sample_at(&self, grid: &Arc<Grid>, t: f64) -> Result<ScalarField> {
        sample_field_at(grid, t, |x, t| self.eval(x, t))
    }

    /// One slice per time level `t_0 .. t_steps`.
    pub fn sample_slab(&self, st: &Arc<SpaceTimeGrid>) -> Result<SlabField> {
        let slices = (0..=st.steps())
            .map(|m| self.sample_at(st.base(), st.time(m)))
            .collect::<Result<Vec<_>>>()?;
        SlabField::new(st.clone(), slices)
    }
}

/// Symmetric 2x2 matrix `[[a11, a12], [a12, a22]]`; in 1D only `a11` is used.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SymMat {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl SymMat {
    pub const fn new(a11: f64, a12: f64, a22: f64) -> Self {
        SymMat { a11, a12, a22 }
    }

    pub const fn identity() -> Self {
        SymMat::new(1.0, 0.0, 1.0)
    }

    pub fn scale(self, c: f64) -> Self {
        SymMat::new(c * self.a11, c * self.a12, c * self.a22)
    }

    pub fn add(self, o: SymMat) -> Self {
        SymMat::new(self.a11 + o.a11, self.a12 + o.a12, self.a22 + o.a22)
    }

    pub fn sub(self, o: SymMat) -> Self {
        SymMat::new(self.a11 - o.a11, self.a12 - o.a12, self.a22 - o.a22)
    }

    /// Eigenvalues in ascending order; in 1D both entries equal `a11`.
    pub fn eigenvalues(&self, dim: usize) -> (f64, f64) {
        if dim == 1 {
            return (self.a11, self.a11);
        }
        let mean = 0.5 * (self.a11 + self.a22);
        let rad = (0.5 * (self.a11 - self.a22)).hypot(self.a12);
        (mean - rad, mean + rad)
    }

    /// Unit eigenvectors matching [`SymMat::eigenvalues`] (2D only).
    pub fn eigenvectors(&self) -> ([f64; 2], [f64; 2]) {
        let angle = 0.5 * (2.0 * self.a12).atan2(self.a11 - self.a22);
        let (s, c) = angle.sin_cos();
        // `angle` points at the larger eigenvalue
        ([-s, c], [c, s])
    }

    /// `tr(A M)` for symmetric `A` and `M`.
    pub fn trace_product(&self, m: &SymMat, dim: usize) -> f64 {
        if dim == 1 {
            self.a11 * m.a11
        } else {
            self.a11 * m.a11 + 2.0 * self.a12 * m.a12 + self.a22 * m.a22
        }
    }

    /// Spectral norm `sup_{|x|=1} |Mx|`.
    pub fn spectral_norm(&self, dim: usize) -> f64 {
        let (lo, hi) = self.eigenvalues(dim);
        lo.abs().max(hi.abs())
    }

    pub fn frobenius_sq(&self, dim: usize) -> f64 {
        if dim == 1 {
            self.a11 * self.a11
        } else {
            self.a11 * self.a11 + 2.0 * self.a12 * self.a12 + self.a22 * self.a22
        }
    }

    pub fn outer(v: [f64; 2]) -> Self {
        SymMat::new(v[0] * v[0], v[0] * v[1], v[1] * v[1])
    }
}

/// One symmetric matrix per active node.
#[derive(Debug, Clone)]
pub struct MatrixField {
    grid: Arc<Grid>,
    values: Vec<SymMat>,
}

impl MatrixField {
    pub fn new(grid: Arc<Grid>, values: Vec<SymMat>) -> Result<Self> {
        if values.len() != grid.active_len() {
            return Err(Error::param(
                "values",
                format!("expected {} matrices, got {}", grid.active_len(), values.len()),
            ));
        }
        if let Some(s) = values
            .iter()
            .position(|m| !(m.a11.is_finite() && m.a12.is_finite() && m.a22.is_finite()))
        {
            return Err(Error::NonFinite {
                node: s,
                coords: grid.point(s),
                value: f64::NAN,
            });
        }
        Ok(MatrixField { grid, values })
    }

    pub fn constant(grid: &Arc<Grid>, m: SymMat) -> Self {
        MatrixField {
            grid: grid.clone(),
            values: vec![m; grid.active_len()],
        }
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> SymMat) -> Result<Self> {
        let dim = grid.dim();
        let values = (0..grid.active_len())
            .map(|s| f(&grid.coords(s)[..dim]))
            .collect();
        MatrixField::new(grid.clone(), values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[SymMat] {
        &self.values
    }

    pub fn at(&self, slot: usize) -> SymMat {
        self.values[slot]
    }

    /// Smallest and largest eigenvalue over all nodes.
    pub fn eigen_range(&self) -> (f64, f64) {
        let dim = self.grid.dim();
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
            let (a, b) = m.eigenvalues(dim);
            (lo.min(a), hi.max(b))
        })
    }

    /// Checks `lambda <= eig <= big_lambda` at every node, with relative slack `1e-12`.
    pub fn check_bounds(&self, lambda: f64, big_lambda: f64) -> Result<()> {
        let dim = self.grid.dim();
        let slack = 1e-12 * big_lambda.abs().max(1.0);
        for (s, m) in self.values.iter().enumerate() {
            let (lo, hi) = m.eigenvalues(dim);
            for value in [lo, hi] {
                if value < lambda - slack || value > big_lambda + slack {
                    return Err(Error::EigenvalueBounds {
                        node: s,
                        value,
                        lambda,
                        big_lambda,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Scalar values on every time level of a [`SpaceTimeGrid`], slice `m` at `t = m dt`.
#[derive(Debug, Clone)]
pub struct SlabField {
    grid: Arc<SpaceTimeGrid>,
    slices: Vec<ScalarField>,
}

impl SlabField {
    pub fn new(grid: Arc<SpaceTimeGrid>, slices: Vec<ScalarField>) -> Result<Self> {
        if slices.len() != grid.steps() + 1 {
            return Err(Error::param(
                "slices",
                format!("expected {} time levels, got {}", grid.steps() + 1, slices.len()),
            ));
        }
        for s in &slices {
            if !Grid::same(s.grid(), grid.base()) {
                return Err(Error::GridMismatch);
            }
        }
        Ok(SlabField { grid, slices })
    }

    pub fn constant(grid: &Arc<SpaceTimeGrid>, value: f64) -> Self {
        SlabField {
            grid: grid.clone(),
            slices: vec![ScalarField::constant(grid.base(), value); grid.steps() + 1],
        }
    }

    pub fn grid(&self) -> &Arc<SpaceTimeGrid> {
        &self.grid
    }

    pub fn slices(&self) -> &[ScalarField] {
        &self.slices
    }

    pub fn slice(&self, m: usize) -> &ScalarField {
        &self.slices[m]
    }

    pub fn last(&self) -> &ScalarField {
        self.slices.last().expect("slab has at least two slices")
    }

    pub fn max_abs(&self) -> f64 {
        self.slices.iter().fold(0.0, |m, s| m.max(s.max_abs()))
    }

    pub fn check_grid(&self, other: &SlabField) -> Result<()> {
        if self.grid.steps() == other.grid.steps()
            && self.grid.dt() == other.grid.dt()
            && Grid::same(self.grid.base(), other.grid.base())
        {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn max_diff(&self, other: &SlabField) -> Result<f64> {
        self.check_grid(other)?;
        let mut m = 0.0f64;
        for (a, b) in self.slices.iter().zip(&other.slices) {
            m = m.max(a.max_diff(b)?);
        }
        Ok(m)
    }

    /// Backward difference `(v^m - v^{m-1}) / dt`; slice 0 repeats slice 1.
    pub fn backward_time_difference(&self) -> SlabField {
        let dt = self.grid.dt();
        let mut out = Vec::with_capacity(self.slices.len());
        for m in 1..self.slices.len() {
            let d = self.slices[m]
                .zip_map(&self.slices[m - 1], |a, b| (a - b) / dt)
                .expect("slices share the base grid");
            if m == 1 {
                out.push(d.clone());
            }
            out.push(d);
        }
        SlabField {
            grid: self.grid.clone(),
            slices: out,
        }
    }
}
