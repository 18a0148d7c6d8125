//! Reference solutions of the discrete obstacle problem that share nothing
//! with the penalized solver: projected SOR, exhaustive active-set
//! enumeration and closed-form 1D solutions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calculus::check_monotone;
use crate::error::{Error, Result};
use crate::field::{MatrixField, ScalarField, SymMat};
use crate::geometry::{build_grid, DomainPreset, Grid};
use crate::linalg::{assemble, SparseMatrix};

const PSOR_MAX_SWEEPS: usize = 2_000_000;
const BRUTE_FORCE_MAX: usize = 20;

fn check_inputs(a: &MatrixField, f: &ScalarField, psi: &ScalarField) -> Result<()> {
    check_monotone(a)?;
    if !Grid::same(a.grid(), f.grid()) {
        return Err(Error::GridMismatch);
    }
    f.check_grid(psi)
}

fn system(a: &MatrixField) -> SparseMatrix {
    let grid = a.grid();
    let slots = grid.interior_slots();
    assemble(grid, |idx| a.at(slots[idx]), |_| 0.0)
}

/// Projected SOR on `-Lu = -f`, `u >= psi`; stops when a sweep changes no
/// unknown by more than `tol`.
pub fn psor_obstacle(
    a: &MatrixField,
    f: &ScalarField,
    psi: &ScalarField,
    omega: f64,
    tol: f64,
) -> Result<ScalarField> {
    check_inputs(a, f, psi)?;
    if !(omega > 0.0 && omega < 2.0) {
        return Err(Error::param("omega", format!("{omega} is not in (0, 2)")));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    let grid = a.grid();
    let slots = grid.interior_slots();
    let l = system(a);
    let n = l.n();
    let lower: Vec<f64> = slots.iter().map(|&s| psi.values()[s]).collect();
    let b: Vec<f64> = slots.iter().map(|&s| f.values()[s]).collect();
    let mut x: Vec<f64> = lower.iter().map(|p| p.max(0.0)).collect();
    let mut history = Vec::new();
    for sweep in 0..PSOR_MAX_SWEEPS {
        let mut change: f64 = 0.0;
        for i in 0..n {
            // -L x = -b, Gauss-Seidel with the current x
            let mut diag = 0.0;
            let mut ax = 0.0;
            for (j, v) in l.row(i) {
                if j == i {
                    diag = -v;
                }
                ax -= v * x[j];
            }
            let next = (x[i] + omega * (-b[i] - ax) / diag).max(lower[i]);
            change = change.max((next - x[i]).abs());
            x[i] = next;
        }
        if sweep % 1000 == 0 {
            history.push(change);
        }
        if change < tol {
            let mut out = vec![0.0; grid.active_len()];
            for (idx, &s) in slots.iter().enumerate() {
                out[s] = x[idx];
            }
            return ScalarField::new(grid.clone(), out);
        }
    }
    Err(Error::not_converged("projected SOR", &history))
}

/// Enumerates all active sets of a problem with at most 20 interior nodes
/// and returns the one satisfying the complementarity system.
pub fn brute_force_lcp(a: &MatrixField, f: &ScalarField, psi: &ScalarField) -> Result<ScalarField> {
    check_inputs(a, f, psi)?;
    let grid = a.grid();
    let m = grid.interior_len();
    if m > BRUTE_FORCE_MAX {
        return Err(Error::Sizing(format!(
            "{m} interior nodes exceed the enumeration limit of {BRUTE_FORCE_MAX}"
        )));
    }
    let slots = grid.interior_slots();
    let l = system(a);
    let dense = DMatrix::from_fn(m, m, |i, j| l.get(i, j));
    let lower: Vec<f64> = slots.iter().map(|&s| psi.values()[s]).collect();
    let b: Vec<f64> = slots.iter().map(|&s| f.values()[s]).collect();
    let scale = 1.0 + lower.iter().chain(&b).fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-10 * scale;
    for mask in 0u32..(1u32 << m) {
        let active = |i: usize| mask >> i & 1 == 1;
        let mut sys = dense.clone();
        let mut rhs = DVector::from_vec(b.clone());
        for i in (0..m).filter(|&i| active(i)) {
            sys.row_mut(i).fill(0.0);
            sys[(i, i)] = 1.0;
            rhs[i] = lower[i];
        }
        let Some(x) = sys.lu().solve(&rhs) else {
            continue;
        };
        let lx = &dense * &x;
        let ok = (0..m).all(|i| {
            if active(i) {
                lx[i] <= b[i] + tol
            } else {
                x[i] >= lower[i] - tol
            }
        });
        if ok {
            let mut out = vec![0.0; grid.active_len()];
            for (idx, &s) in slots.iter().enumerate() {
                out[s] = x[idx];
            }
            return ScalarField::new(grid.clone(), out);
        }
    }
    Err(Error::NoLcpSolution)
}

/// Closed-form solution of a 1D obstacle problem on `(-1, 1)` with `u'' = f`
/// off the contact set `[-x_star, x_star]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticSolution {
    id: &'static str,
    x_star: f64,
    kind: Instance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instance {
    Cap,
    Sag,
}

/// Ids accepted by [`analytic_1d`].
pub const ANALYTIC_CATALOGUE: [&str; 2] = ["parabolic-cap", "sagging-membrane"];

/// `parabolic-cap`: `psi = 1/2 - x^2`, `f = 0`.
/// `sagging-membrane`: `psi = -1/2`, `f = 2`.
/// Both have contact boundary `x_star = 1 - 1/sqrt(2)`.
pub fn analytic_1d(id: &str) -> Result<AnalyticSolution> {
    let x_star = 1.0 - 0.5f64.sqrt();
    match id {
        "parabolic-cap" => Ok(AnalyticSolution {
            id: "parabolic-cap",
            x_star,
            kind: Instance::Cap,
        }),
        "sagging-membrane" => Ok(AnalyticSolution {
            id: "sagging-membrane",
            x_star,
            kind: Instance::Sag,
        }),
        other => Err(Error::UnknownInstance(other.to_string())),
    }
}

impl AnalyticSolution {
    pub fn id(&self) -> &'static str {
        self.id
    }

    pub fn x_star(&self) -> f64 {
        self.x_star
    }

    pub fn psi(&self, x: f64) -> f64 {
        match self.kind {
            Instance::Cap => 0.5 - x * x,
            Instance::Sag => -0.5,
        }
    }

    pub fn f(&self, _x: f64) -> f64 {
        match self.kind {
            Instance::Cap => 0.0,
            Instance::Sag => 2.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let a = self.x_star;
        let r = x.abs();
        if r <= a {
            return self.psi(x);
        }
        match self.kind {
            Instance::Cap => self.psi(a) - 2.0 * a * (r - a),
            Instance::Sag => (r - a).powi(2) - 0.5,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let a = self.x_star;
        let r = x.abs();
        let d = if r <= a {
            match self.kind {
                Instance::Cap => -2.0 * r,
                Instance::Sag => 0.0,
            }
        } else {
            match self.kind {
                Instance::Cap => -2.0 * a,
                Instance::Sag => 2.0 * (r - a),
            }
        };
        d * x.signum()
    }

    pub fn sample(&self, grid: &Arc<Grid>) -> Result<ScalarField> {
        if grid.dim() != 1 {
            return Err(Error::param("grid", "analytic solutions are one-dimensional"));
        }
        Ok(ScalarField::from_fn(grid, |x| self.eval(x[0])))
    }

    pub fn sample_psi(&self, grid: &Arc<Grid>) -> ScalarField {
        ScalarField::from_fn(grid, |x| self.psi(x[0]))
    }

    pub fn sample_f(&self, grid: &Arc<Grid>) -> ScalarField {
        ScalarField::from_fn(grid, |x| self.f(x[0]))
    }
}

/// Random coefficient field with `1 <= a11, a22 <= 3` and
/// `|a12| <= 0.9 min(a11, a22)`, so every stencil is monotone.
pub fn random_monotone_coefficients(grid: &Arc<Grid>, rng: &mut impl Rng) -> Result<MatrixField> {
    let dim = grid.dim();
    let values = (0..grid.active_len())
        .map(|_| {
            let a11 = rng.gen_range(1.0..3.0);
            if dim == 1 {
                return SymMat::new(a11, 0.0, 1.0);
            }
            let a22 = rng.gen_range(1.0..3.0);
            let a12 = rng.gen_range(-0.9..0.9) * a11.min(a22);
            SymMat::new(a11, a12, a22)
        })
        .collect();
    MatrixField::new(grid.clone(), values)
}

/// A small obstacle problem with rough data.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub a: MatrixField,
    pub f: ScalarField,
    pub psi: ScalarField,
}

/// Draws a grid with at most `max_interior` interior nodes (intervals,
/// squares and disks), a monotone coefficient field, `f` in `[-4, 2]` and an
/// obstacle in `[-0.6, 0.6]` that is nonpositive off the interior.
pub fn random_instance(seed: u64, max_interior: usize) -> Result<RandomInstance> {
    draw_instance(seed, max_interior, false)
}

/// As [`random_instance`] with one coefficient matrix for all nodes, which
/// makes the system matrix symmetric.
pub fn random_symmetric_instance(seed: u64, max_interior: usize) -> Result<RandomInstance> {
    draw_instance(seed, max_interior, true)
}

fn draw_instance(seed: u64, max_interior: usize, constant: bool) -> Result<RandomInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grids = Vec::new();
    for cells in 4..=max_interior + 1 {
        grids.push(build_grid(DomainPreset::Interval, cells)?);
    }
    for cells in 4..=8 {
        for preset in [DomainPreset::Square, DomainPreset::Disk] {
            let g = build_grid(preset, cells)?;
            if g.interior_len() <= max_interior {
                grids.push(g);
            }
        }
    }
    if grids.is_empty() {
        return Err(Error::Sizing(format!("no grid has at most {max_interior} interior nodes")));
    }
    let grid = grids[rng.gen_range(0..grids.len())].clone();
    let mut a = random_monotone_coefficients(&grid, &mut rng)?;
    if constant {
        a = MatrixField::constant(&grid, a.at(0));
    }
    let f = ScalarField::from_fn(&grid, |_| rng.gen_range(-4.0..2.0));
    let mut psi = ScalarField::from_fn(&grid, |_| rng.gen_range(-0.6..0.6));
    for s in 0..grid.active_len() {
        if !grid.is_interior(s) {
            psi.values_mut()[s] = -psi.values()[s].abs();
        }
    }
    Ok(RandomInstance { a, f, psi })
}
