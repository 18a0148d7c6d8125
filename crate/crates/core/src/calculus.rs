//! Finite-difference second derivatives, the nondivergence operator
//! `a_ij D_ij u`, its convex max-of-linear extension, mollification and the
//! ellipticity audit.
//!
//! Mixed derivatives use the 7-point skewed stencil oriented by `sign(a12)`,
//! which gives nonnegative off-diagonal weights whenever
//! `|a12| <= min(a11, a22)`. The same weights are used for assembling linear
//! systems (see [`crate::linalg`]), so `apply_operator` and the solvers agree
//! bit for bit on what the discrete operator is.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{MatrixField, ScalarField, SymMat};
use crate::geometry::{offset_index, Grid, NO_SLOT};

const E: usize = offset_index(1, 0);
const W: usize = offset_index(-1, 0);
const N: usize = offset_index(0, 1);
const S: usize = offset_index(0, -1);
const NE: usize = offset_index(1, 1);
const SW: usize = offset_index(-1, -1);
const NW: usize = offset_index(-1, 1);
const SE: usize = offset_index(1, -1);
const C: usize = offset_index(0, 0);

/// Stencil weights of `a_ij D_ij` at spacing `h`, indexed by [`offset_index`].
pub fn stencil_weights(a: &SymMat, h: f64, dim: usize) -> [f64; 9] {
    let inv = 1.0 / (h * h);
    let mut w = [0.0; 9];
    if dim == 1 {
        w[E] = a.a11 * inv;
        w[W] = a.a11 * inv;
        w[C] = -2.0 * a.a11 * inv;
        return w;
    }
    let m = a.a12.abs();
    w[E] = (a.a11 - m) * inv;
    w[W] = w[E];
    w[N] = (a.a22 - m) * inv;
    w[S] = w[N];
    if a.a12 >= 0.0 {
        w[NE] = m * inv;
        w[SW] = m * inv;
    } else {
        w[NW] = m * inv;
        w[SE] = m * inv;
    }
    w[C] = -2.0 * (a.a11 + a.a22 - m) * inv;
    w
}

/// `|a12| <= min(a11, a22)`, the condition for nonnegative off-centre weights.
pub fn is_monotone(a: &SymMat, dim: usize) -> bool {
    if dim == 1 {
        return a.a11 >= 0.0;
    }
    let min_diag = a.a11.min(a.a22);
    a.a12.abs() <= min_diag * (1.0 + 1e-12)
}

pub fn check_monotone(a: &MatrixField) -> Result<()> {
    let grid = a.grid();
    for &slot in grid.interior_slots() {
        let m = a.at(slot);
        if !is_monotone(&m, grid.dim()) {
            return Err(Error::NonMonotone {
                node: slot,
                a12: m.a12.abs(),
                min_diag: m.a11.min(m.a22),
            });
        }
    }
    Ok(())
}

#[inline]
pub(crate) fn apply_weights(weights: &[f64; 9], stencil: &[usize; 9], u: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..9 {
        let s = stencil[k];
        if s != NO_SLOT && weights[k] != 0.0 {
            acc += weights[k] * u[s];
        }
    }
    acc
}

/// Linear action `a_ij D_ij u` at the `idx`-th interior node.
#[inline]
pub fn linear_action(grid: &Grid, a: &SymMat, idx: usize, u: &[f64]) -> f64 {
    let w = stencil_weights(a, grid.h(), grid.dim());
    apply_weights(&w, grid.stencil(idx), u)
}

/// Central second differences. `D_12` here is the symmetric 4-point
/// stencil; the operator itself uses the oriented 7-point version.
/// Non-interior nodes carry the zero matrix.
pub fn hessian_stencils(u: &ScalarField) -> MatrixField {
    let grid = u.grid();
    let h2 = grid.h() * grid.h();
    let v = u.values();
    let mut out = vec![SymMat::default(); grid.active_len()];
    for (idx, &slot) in grid.interior_slots().iter().enumerate() {
        let st = grid.stencil(idx);
        let d11 = (v[st[E]] - 2.0 * v[st[C]] + v[st[W]]) / h2;
        out[slot] = if grid.dim() == 1 {
            SymMat::new(d11, 0.0, 0.0)
        } else {
            let d22 = (v[st[N]] - 2.0 * v[st[C]] + v[st[S]]) / h2;
            let d12 = (v[st[NE]] - v[st[SE]] - v[st[NW]] + v[st[SW]]) / (4.0 * h2);
            SymMat::new(d11, d12, d22)
        };
    }
    MatrixField::new(grid.clone(), out).expect("finite differences of finite data")
}

/// Oriented 7-point mixed difference used by the operator when `a12 >= 0`
/// (`positive = true`) or `a12 < 0`.
pub fn mixed_oriented(u: &ScalarField, idx: usize, positive: bool) -> f64 {
    let grid = u.grid();
    let st = grid.stencil(idx);
    let v = u.values();
    let h2 = grid.h() * grid.h();
    let axis = v[st[E]] + v[st[W]] + v[st[N]] + v[st[S]];
    if positive {
        (2.0 * v[st[C]] + v[st[NE]] + v[st[SW]] - axis) / (2.0 * h2)
    } else {
        -(2.0 * v[st[C]] + v[st[NW]] + v[st[SE]] - axis) / (2.0 * h2)
    }
}

/// Coefficient presets for the harness configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientPreset {
    Identity,
    /// Constant `diag(a11, a22)`; in 1D only `a11`.
    Diagonal { a11: f64, a22: f64 },
    /// `R(angle) diag(1, ratio) R(angle)^T`.
    RotatedAnisotropic { angle: f64, ratio: f64 },
    /// `(1 + jump) I` on alternating squares of side `period`, `I` elsewhere.
    Checkerboard { period: f64, jump: f64 },
    /// Smoothly varying anisotropic coefficients with a small mixed term.
    Oscillatory { frequency: f64, amplitude: f64 },
}

impl CoefficientPreset {
    pub fn label(&self) -> String {
        match self {
            CoefficientPreset::Identity => "identity".into(),
            CoefficientPreset::Diagonal { a11, a22 } => format!("diagonal({a11},{a22})"),
            CoefficientPreset::RotatedAnisotropic { angle, ratio } => {
                format!("rotated-anisotropic({angle},{ratio})")
            }
            CoefficientPreset::Checkerboard { period, jump } => {
                format!("checkerboard({period},{jump})")
            }
            CoefficientPreset::Oscillatory { frequency, amplitude } => {
                format!("oscillatory({frequency},{amplitude})")
            }
        }
    }

    pub fn matrix_at(&self, x: &[f64]) -> SymMat {
        let x1 = x[0];
        let x2 = x.get(1).copied().unwrap_or(0.0);
        let two_d = x.len() == 2;
        match *self {
            CoefficientPreset::Identity => SymMat::identity(),
            CoefficientPreset::Diagonal { a11, a22 } => SymMat::new(a11, 0.0, a22),
            CoefficientPreset::RotatedAnisotropic { angle, ratio } => {
                let (s, c) = angle.sin_cos();
                SymMat::new(c * c + ratio * s * s, (1.0 - ratio) * c * s, s * s + ratio * c * c)
            }
            CoefficientPreset::Checkerboard { period, jump } => {
                let cell = |v: f64| ((v + 1.0) / period + 1e-9).floor() as i64;
                let parity = if two_d { cell(x1) + cell(x2) } else { cell(x1) };
                let c = if parity.rem_euclid(2) == 0 { 1.0 + jump } else { 1.0 };
                SymMat::identity().scale(c)
            }
            CoefficientPreset::Oscillatory { frequency, amplitude } => {
                let (s1, _) = (frequency * x1).sin_cos();
                let (_, c2) = (frequency * x2).sin_cos();
                SymMat::new(
                    1.0 + amplitude * s1 * s1,
                    0.5 * amplitude.abs().min(1.0) * s1 * c2,
                    1.0 + amplitude * c2 * c2,
                )
            }
        }
    }

    pub fn sample(&self, grid: &Arc<Grid>) -> Result<MatrixField> {
        MatrixField::from_fn(grid, |x| self.matrix_at(x))
    }
}

/// Nonempty list of coefficient fields; one member is a linear operator,
/// several define `F(x, M) = max_k tr(A^k(x) M)`.
#[derive(Debug, Clone)]
pub struct OperatorFamily {
    members: Vec<MatrixField>,
    lambda: f64,
    big_lambda: f64,
}

impl OperatorFamily {
    /// Validates the members against the declared ellipticity constants.
    pub fn new(members: Vec<MatrixField>, lambda: f64, big_lambda: f64) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::param("members", "operator family is empty"));
        }
        if !(lambda > 0.0) || big_lambda < lambda {
            return Err(Error::param(
                "lambda",
                format!("need 0 < lambda <= Lambda, got [{lambda}, {big_lambda}]"),
            ));
        }
        let grid = members[0].grid().clone();
        for m in &members {
            if !Grid::same(&grid, m.grid()) {
                return Err(Error::GridMismatch);
            }
            m.check_bounds(lambda, big_lambda)?;
        }
        Ok(OperatorFamily {
            members,
            lambda,
            big_lambda,
        })
    }

    /// Declares the tightest constants observed on the members.
    pub fn from_members(members: Vec<MatrixField>) -> Result<Self> {
        let (lo, hi) = members
            .iter()
            .map(MatrixField::eigen_range)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| (a.min(c), b.max(d)));
        OperatorFamily::new(members, lo, hi)
    }

    pub fn single(member: MatrixField) -> Result<Self> {
        OperatorFamily::from_members(vec![member])
    }

    pub fn from_presets(presets: &[CoefficientPreset], grid: &Arc<Grid>) -> Result<Self> {
        let members = presets
            .iter()
            .map(|p| p.sample(grid))
            .collect::<Result<Vec<_>>>()?;
        OperatorFamily::from_members(members)
    }

    pub fn members(&self) -> &[MatrixField] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_linear(&self) -> bool {
        self.members.len() == 1
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.members[0].grid()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn big_lambda(&self) -> f64 {
        self.big_lambda
    }

    pub fn check_monotone(&self) -> Result<()> {
        self.members.iter().try_for_each(check_monotone)
    }

    /// `F(x, M)` at an active slot.
    pub fn eval_matrix(&self, slot: usize, m: &SymMat) -> f64 {
        let dim = self.grid().dim();
        self.members
            .iter()
            .map(|a| a.at(slot).trace_product(m, dim))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map_members(&self, f: impl Fn(&MatrixField) -> Result<MatrixField>) -> Result<Self> {
        let members = self.members.iter().map(f).collect::<Result<Vec<_>>>()?;
        OperatorFamily::new(members, self.lambda, self.big_lambda)
    }
}

/// `max_k a^k_ij D_ij u` at interior nodes (zero elsewhere) together with the
/// maximizing member index per interior node. Ties keep the lowest index.
pub fn apply_with_policy(family: &OperatorFamily, u: &ScalarField) -> Result<(ScalarField, Vec<usize>)> {
    let grid = family.grid();
    if !Grid::same(grid, u.grid()) {
        return Err(Error::GridMismatch);
    }
    let v = u.values();
    let mut out = vec![0.0; grid.active_len()];
    let mut policy = vec![0usize; grid.interior_len()];
    for (idx, &slot) in grid.interior_slots().iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for (k, member) in family.members().iter().enumerate() {
            let val = linear_action(grid, &member.at(slot), idx, v);
            if val > best {
                best = val;
                policy[idx] = k;
            }
        }
        out[slot] = best;
    }
    Ok((ScalarField::new(grid.clone(), out)?, policy))
}

/// Discrete `F(x, D^2 u)` at interior nodes; non-interior entries are 0.
pub fn apply_operator(family: &OperatorFamily, u: &ScalarField) -> Result<ScalarField> {
    apply_with_policy(family, u).map(|(f, _)| f)
}

/// `a_ij D_ij u` for a single coefficient field; non-interior entries are 0.
pub fn apply_linear(a: &MatrixField, u: &ScalarField) -> Result<ScalarField> {
    let grid = a.grid();
    if !Grid::same(grid, u.grid()) {
        return Err(Error::GridMismatch);
    }
    let mut out = vec![0.0; grid.active_len()];
    for (idx, &slot) in grid.interior_slots().iter().enumerate() {
        out[slot] = linear_action(grid, &a.at(slot), idx, u.values());
    }
    ScalarField::new(grid.clone(), out)
}

/// Fields that can be convolved with the discrete mollifier.
pub trait Mollify: Sized {
    fn mollify_with(&self, kernel: &Kernel) -> Self;
    fn grid_ref(&self) -> &Arc<Grid>;
}

/// Normalized bump `exp(-1 / (1 - |z|^2/r^2))` on lattice offsets `|z| < r`.
#[derive(Debug, Clone)]
pub struct Kernel {
    offsets: Vec<(i64, i64, f64)>,
}

impl Kernel {
    fn new(grid: &Grid, radius: f64) -> Self {
        let reach = (radius / grid.h()).ceil() as i64;
        let dy_range = if grid.dim() == 1 { 0..=0 } else { -reach..=reach };
        let mut offsets = Vec::new();
        for dy in dy_range {
            for dx in -reach..=reach {
                let r = grid.h() * ((dx * dx + dy * dy) as f64).sqrt();
                let t = r / radius;
                if t < 1.0 {
                    offsets.push((dx, dy, (-1.0 / (1.0 - t * t)).exp()));
                }
            }
        }
        Kernel { offsets }
    }

    /// Weighted average over the active neighbours of every slot; weights are
    /// renormalized near the boundary so the result is a convex combination.
    fn convolve<T: Copy>(
        &self,
        grid: &Grid,
        values: &[T],
        zero: T,
        axpy: impl Fn(T, f64, T) -> T,
        scale: impl Fn(T, f64) -> T,
    ) -> Vec<T> {
        let side = grid.side() as i64;
        let mut out = Vec::with_capacity(values.len());
        for slot in 0..grid.active_len() {
            let (i, j) = grid.lattice_ij(slot);
            let (i, j) = (i as i64, j as i64);
            let mut acc = zero;
            let mut total = 0.0;
            for &(dx, dy, w) in &self.offsets {
                let (ii, jj) = (i + dx, j + dy);
                if ii < 0 || jj < 0 || ii >= side || jj >= side {
                    continue;
                }
                if let Some(s2) = grid.slot_at(ii as usize, jj as usize) {
                    acc = axpy(acc, w, values[s2]);
                    total += w;
                }
            }
            out.push(scale(acc, 1.0 / total));
        }
        out
    }
}

impl Mollify for ScalarField {
    fn mollify_with(&self, kernel: &Kernel) -> Self {
        let v = kernel.convolve(self.grid(), self.values(), 0.0, |a, w, b| a + w * b, |a, c| a * c);
        ScalarField::new(self.grid().clone(), v).expect("same layout")
    }

    fn grid_ref(&self) -> &Arc<Grid> {
        self.grid()
    }
}

impl Mollify for MatrixField {
    fn mollify_with(&self, kernel: &Kernel) -> Self {
        let v = kernel.convolve(
            self.grid(),
            self.values(),
            SymMat::default(),
            |a, w, b| a.add(b.scale(w)),
            |a, c| a.scale(c),
        );
        MatrixField::new(self.grid().clone(), v).expect("same layout")
    }

    fn grid_ref(&self) -> &Arc<Grid> {
        self.grid()
    }
}

/// Discrete convolution with a compactly supported bump of the given radius.
pub fn mollify<F: Mollify>(field: &F, radius: f64) -> Result<F> {
    let grid = field.grid_ref();
    if !(radius >= grid.h()) {
        return Err(Error::param(
            "radius",
            format!("mollifier radius {radius} is below the mesh width {}", grid.h()),
        ));
    }
    let kernel = Kernel::new(grid, radius);
    Ok(field.mollify_with(&kernel))
}

/// Samples `(F(x, M+N) - F(x, M)) / |N|` over random symmetric `M`, random
/// positive semidefinite `N` and random interior nodes, and returns the
/// observed `(min, max)`. Any ratio outside `[lambda, n Lambda]` rejects the
/// family.
pub fn audit_ellipticity(family: &OperatorFamily, trials: usize, seed: u64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::param("trials", "need at least one trial"));
    }
    let grid = family.grid();
    let dim = grid.dim();
    let lo = family.lambda() * (1.0 - 1e-12);
    let hi = dim as f64 * family.big_lambda() * (1.0 + 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut min_r, mut max_r) = (f64::INFINITY, f64::NEG_INFINITY);
    for trial in 0..trials {
        let slot = grid.interior_slots()[rng.gen_range(0..grid.interior_len())];
        let m = random_symmetric(&mut rng, dim);
        let n = if trial % 2 == 0 {
            let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            if dim == 1 {
                SymMat::new(v[0] * v[0] + 1e-3, 0.0, 0.0)
            } else {
                SymMat::outer(v).add(SymMat::identity().scale(1e-12))
            }
        } else {
            // B B^T with B random
            let b: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            SymMat::new(
                b[0] * b[0] + b[1] * b[1] + 1e-3,
                b[0] * b[2] + b[1] * b[3],
                b[2] * b[2] + b[3] * b[3] + 1e-3,
            )
        };
        let norm = n.spectral_norm(dim);
        let ratio = (family.eval_matrix(slot, &m.add(n)) - family.eval_matrix(slot, &m)) / norm;
        if !(lo..=hi).contains(&ratio) {
            return Err(Error::NonElliptic {
                ratio,
                lo: family.lambda(),
                hi: dim as f64 * family.big_lambda(),
            });
        }
        min_r = min_r.min(ratio);
        max_r = max_r.max(ratio);
    }
    Ok((min_r, max_r))
}

pub(crate) fn random_symmetric(rng: &mut impl Rng, dim: usize) -> SymMat {
    if dim == 1 {
        SymMat::new(rng.gen_range(-1.0..1.0), 0.0, 0.0)
    } else {
        SymMat::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
    }
}
