//! Backward Euler time stepping for the penalized parabolic obstacle
//! problem `u_t - a_ij D_ij u = psi_eps(g)(1 - phi_eps(u - psi)) + f` with
//! `u = 0` on the lateral boundary and at `t = 0`.

use std::sync::Arc;

use crate::calculus::{apply_linear, check_monotone, mollify};
use crate::elliptic::{FixedPointMethod, FixedPointOptions, Pipeline, SolverReport, StageRecord};
use crate::error::{Error, Result};
use crate::field::{MatrixField, ScalarField, SlabField};
use crate::geometry::{Grid, SpaceTimeGrid};
use crate::linalg::{assemble, LinearSolver};
use crate::norms::{complementarity_residual_parabolic, Complementarity};
use crate::penalty::{assemble_g_parabolic, penalized_rhs_parabolic, validate_schedule, PenaltyShape};

const BOUNDARY_TOL: f64 = 1e-12;

fn from_unknowns(grid: &Arc<Grid>, x: &[f64]) -> Result<ScalarField> {
    let mut out = vec![0.0; grid.active_len()];
    for (idx, &s) in grid.interior_slots().iter().enumerate() {
        out[s] = x[idx];
    }
    ScalarField::new(grid.clone(), out)
}

/// Factorized `L - I/dt` for one coefficient field.
struct StepOperator {
    solver: LinearSolver,
    dt: f64,
}

impl StepOperator {
    fn new(a: &MatrixField, dt: f64) -> Result<Self> {
        check_monotone(a)?;
        let grid = a.grid();
        let slots = grid.interior_slots();
        let m = assemble(grid, |idx| a.at(slots[idx]), |_| -1.0 / dt);
        Ok(StepOperator {
            solver: LinearSolver::new(m)?,
            dt,
        })
    }

    fn solve(&self, u_prev: &ScalarField, rhs: &ScalarField) -> Result<ScalarField> {
        let grid = rhs.grid();
        let b: Vec<f64> = grid
            .interior_slots()
            .iter()
            .map(|&s| -(rhs.values()[s] + u_prev.values()[s] / self.dt))
            .collect();
        from_unknowns(grid, &self.solver.solve(&b)?)
    }
}

/// Solves `(u - u_prev)/dt - a_ij D_ij u = rhs` with zero boundary data.
pub fn step_implicit(a: &MatrixField, u_prev: &ScalarField, dt: f64, rhs: &ScalarField) -> Result<ScalarField> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::param("dt", format!("{dt} is not positive")));
    }
    if !Grid::same(a.grid(), rhs.grid()) {
        return Err(Error::GridMismatch);
    }
    u_prev.check_grid(rhs)?;
    StepOperator::new(a, dt)?.solve(u_prev, rhs)
}

fn coeff_at(coeffs: &[MatrixField], m: usize) -> &MatrixField {
    &coeffs[if coeffs.len() == 1 { 0 } else { m }]
}

fn check_coeffs(coeffs: &[MatrixField], st: &SpaceTimeGrid) -> Result<()> {
    let levels = st.steps() + 1;
    if coeffs.len() != 1 && coeffs.len() != levels {
        return Err(Error::param(
            "coeffs",
            format!("expected 1 or {levels} coefficient fields, got {}", coeffs.len()),
        ));
    }
    for a in coeffs {
        if !Grid::same(a.grid(), st.base()) {
            return Err(Error::GridMismatch);
        }
        check_monotone(a)?;
    }
    Ok(())
}

/// Marches `u_t - a_ij D_ij u = f` from `u = 0`.
pub fn solve_parabolic_unconstrained(coeffs: &[MatrixField], f: &SlabField) -> Result<SlabField> {
    let st = f.grid().clone();
    check_coeffs(coeffs, &st)?;
    let grid = st.base();
    let mut slices = vec![ScalarField::zeros(grid)];
    let mut op = None;
    for m in 1..=st.steps() {
        if op.is_none() || coeffs.len() > 1 {
            op = Some(StepOperator::new(coeff_at(coeffs, m), st.dt())?);
        }
        let next = op.as_ref().expect("set above").solve(&slices[m - 1], f.slice(m))?;
        slices.push(next);
    }
    SlabField::new(st, slices)
}

/// `u_t - a_ij D_ij u` with the backward difference, at interior nodes of
/// levels `1..=steps`; zero elsewhere.
pub fn parabolic_operator(coeffs: &[MatrixField], u: &SlabField) -> Result<SlabField> {
    let st = u.grid().clone();
    check_coeffs(coeffs, &st)?;
    let grid = st.base();
    let dt = st.dt();
    let mut slices = vec![ScalarField::zeros(grid)];
    for m in 1..=st.steps() {
        let lu = apply_linear(coeff_at(coeffs, m), u.slice(m))?;
        let mut out = vec![0.0; grid.active_len()];
        for &s in grid.interior_slots() {
            out[s] = (u.slice(m).values()[s] - u.slice(m - 1).values()[s]) / dt - lu.values()[s];
        }
        slices.push(ScalarField::new(grid.clone(), out)?);
    }
    SlabField::new(st, slices)
}

/// Discrete parabolic comparison audit: false only if `u` is a
/// supersolution (`u_t - Lu >= 0` inside, `u >= 0` on the parabolic
/// boundary) that still dips below `-tol`.
pub fn check_parabolic_comparison(coeffs: &[MatrixField], u: &SlabField) -> Result<bool> {
    let pu = parabolic_operator(coeffs, u)?;
    let grid = u.grid().base();
    let levels = u.slices().len();
    let sup = (1..levels).all(|m| grid.interior_slots().iter().all(|&s| pu.slice(m).values()[s] >= 0.0));
    let initial = u.slice(0).values().iter().all(|&v| v >= 0.0);
    let lateral = (1..levels).all(|m| grid.boundary_slots().all(|s| u.slice(m).values()[s] >= 0.0));
    if !(sup && initial && lateral) {
        return Ok(true);
    }
    let tol = 1e-10 * (1.0 + u.max_abs());
    Ok(u.slices().iter().all(|sl| sl.min() >= -tol))
}

/// Data of the penalized parabolic obstacle problem.
#[derive(Debug, Clone)]
pub struct ParabolicProblem {
    coeffs: Vec<MatrixField>,
    f: SlabField,
    psi: SlabField,
    pipeline: Pipeline,
}

/// Pipeline output plus `g = -f + psi_t - a_ij D_ij psi`.
#[derive(Debug, Clone)]
pub struct ParabolicData {
    pub coeffs: Vec<MatrixField>,
    pub f: SlabField,
    pub psi: SlabField,
    pub g: SlabField,
}

fn check_parabolic_boundary(psi: &SlabField) -> Result<()> {
    let grid = psi.grid().base();
    for (m, slice) in psi.slices().iter().enumerate() {
        for s in 0..grid.active_len() {
            let on_boundary = m == 0 || !grid.is_interior(s);
            let v = slice.values()[s];
            if on_boundary && v > BOUNDARY_TOL {
                return Err(Error::ObstacleOnBoundary { node: s, value: v });
            }
        }
    }
    Ok(())
}

impl ParabolicProblem {
    pub fn new(coeffs: Vec<MatrixField>, f: SlabField, psi: SlabField, pipeline: Pipeline) -> Result<Self> {
        f.check_grid(&psi)?;
        check_coeffs(&coeffs, f.grid())?;
        check_parabolic_boundary(&psi)?;
        if let Pipeline::Mollified { radius } = pipeline {
            let h = f.grid().base().h();
            if !(radius >= h) {
                return Err(Error::param(
                    "radius",
                    format!("mollifier radius {radius} is below the mesh width {h}"),
                ));
            }
        }
        Ok(ParabolicProblem { coeffs, f, psi, pipeline })
    }

    pub fn grid(&self) -> &Arc<SpaceTimeGrid> {
        self.f.grid()
    }

    pub fn coeffs(&self) -> &[MatrixField] {
        &self.coeffs
    }

    pub fn f(&self) -> &SlabField {
        &self.f
    }

    pub fn psi(&self) -> &SlabField {
        &self.psi
    }

    /// Mollification acts slice by slice in space only.
    pub fn prepared(&self) -> Result<ParabolicData> {
        let (coeffs, f, psi) = match self.pipeline {
            Pipeline::Raw => (self.coeffs.clone(), self.f.clone(), self.psi.clone()),
            Pipeline::Mollified { radius } => {
                let st = self.f.grid().clone();
                let slab = |s: &SlabField| -> Result<SlabField> {
                    let slices = s.slices().iter().map(|x| mollify(x, radius)).collect::<Result<Vec<_>>>()?;
                    SlabField::new(st.clone(), slices)
                };
                let coeffs = self
                    .coeffs
                    .iter()
                    .map(|a| mollify(a, radius))
                    .collect::<Result<Vec<_>>>()?;
                check_coeffs(&coeffs, &st)?;
                let psi = slab(&self.psi)?;
                check_parabolic_boundary(&psi)?;
                (coeffs, slab(&self.f)?, psi)
            }
        };
        let psi_t = psi.backward_time_difference();
        let g = assemble_g_parabolic(&coeffs, &f, &psi, &psi_t)?;
        Ok(ParabolicData { coeffs, f, psi, g })
    }
}

impl ParabolicData {
    pub fn tol_fp(&self, scale: f64) -> f64 {
        let g_plus = self
            .g
            .slices()
            .iter()
            .flat_map(|s| s.values().iter())
            .fold(0.0f64, |m, v| m.max(*v));
        scale * (1.0 + self.f.max_abs() + g_plus)
    }

    pub fn complementarity(&self, u: &SlabField) -> Result<Complementarity> {
        let pu = parabolic_operator(&self.coeffs, u)?;
        complementarity_residual_parabolic(u, &self.psi, &pu, &self.f)
    }
}

struct StepCounters {
    outer: usize,
    inner: usize,
    worst_residual: f64,
}

/// One implicit step: fixed point of `v -> step(rhs(v))` at level `m`.
#[allow(clippy::too_many_arguments)]
fn penalized_step(
    data: &ParabolicData,
    op: &StepOperator,
    m: usize,
    u_prev: &ScalarField,
    shape: &PenaltyShape,
    opts: &FixedPointOptions,
    tol: f64,
    counters: &mut StepCounters,
) -> Result<ScalarField> {
    let grid = u_prev.grid().clone();
    let (g, f, psi) = (data.g.slice(m), data.f.slice(m), data.psi.slice(m));
    let a = coeff_at(&data.coeffs, m);
    let dt = op.dt;
    let rhs = |v: &ScalarField| penalized_rhs_parabolic(g, f, v, psi, shape);
    let mut u = op.solve(u_prev, &rhs(u_prev)?)?;
    counters.inner += 1;
    let mut history = Vec::new();
    for it in 0..=opts.max_iters {
        let su = op.solve(u_prev, &rhs(&u)?)?;
        counters.inner += 1;
        let r = u.max_diff(&su)?;
        history.push(r);
        if r <= tol {
            counters.outer += it;
            counters.worst_residual = counters.worst_residual.max(r);
            return Ok(u);
        }
        if !r.is_finite() || it == opts.max_iters {
            break;
        }
        u = match opts.method {
            FixedPointMethod::Picard { omega } => u.zip_map(&su, |x, y| (1.0 - omega) * x + omega * y)?,
            FixedPointMethod::Newton => {
                // H(u) = (u - u_prev)/dt - Lu - rhs(u); -H' = L - I/dt - diag(psi_eps(g) phi')
                let slots = grid.interior_slots();
                let residual = |v: &ScalarField| -> Result<Vec<f64>> {
                    let lv = apply_linear(a, v)?;
                    let rv = rhs(v)?;
                    Ok(slots
                        .iter()
                        .map(|&s| (v.values()[s] - u_prev.values()[s]) / dt - lv.values()[s] - rv.values()[s])
                        .collect())
                };
                let h = residual(&u)?;
                let jac = assemble(
                    &grid,
                    |idx| a.at(slots[idx]),
                    |idx| {
                        let s = slots[idx];
                        -1.0 / dt - shape.psi(g.values()[s]) * shape.phi_prime(u.values()[s] - psi.values()[s])
                    },
                );
                let delta = LinearSolver::new(jac)?.solve(&h)?;
                counters.inner += 1;
                let base = norm2(&h);
                let mut alpha = 1.0;
                let mut trial = u.clone();
                loop {
                    for (idx, &s) in slots.iter().enumerate() {
                        trial.values_mut()[s] = u.values()[s] + alpha * delta[idx];
                    }
                    let r = norm2(&residual(&trial)?);
                    if r <= (1.0 - 1e-4 * alpha) * base || alpha < 1e-6 || base == 0.0 {
                        break;
                    }
                    alpha *= 0.5;
                }
                trial
            }
        };
    }
    Err(Error::not_converged("penalized time step", &history))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Marches every `eps` of the schedule from `t = 0` to `T`; returns the slab
/// of the last `eps`.
pub fn solve_parabolic_obstacle(problem: &ParabolicProblem, schedule: &[f64]) -> Result<(SlabField, SolverReport)> {
    solve_parabolic_obstacle_with(problem, schedule, &FixedPointOptions::default())
}

pub fn solve_parabolic_obstacle_with(
    problem: &ParabolicProblem,
    schedule: &[f64],
    opts: &FixedPointOptions,
) -> Result<(SlabField, SolverReport)> {
    validate_schedule(schedule)?;
    let data = problem.prepared()?;
    let st = problem.grid().clone();
    let grid = st.base();
    let tol = data.tol_fp(opts.tol_scale);
    let mut report = SolverReport {
        tol_fp: tol,
        ..Default::default()
    };
    let mut result = None;
    for &eps in schedule {
        let shape = PenaltyShape::new(eps)?;
        let mut counters = StepCounters {
            outer: 0,
            inner: 0,
            worst_residual: 0.0,
        };
        let mut slices = vec![ScalarField::zeros(grid)];
        let mut op: Option<StepOperator> = None;
        for m in 1..=st.steps() {
            let wrap = |e: Error| Error::Step {
                step: m,
                eps,
                source: Box::new(e),
            };
            if op.is_none() || data.coeffs.len() > 1 {
                op = Some(StepOperator::new(coeff_at(&data.coeffs, m), st.dt()).map_err(wrap)?);
            }
            let op_ref = op.as_ref().expect("set above");
            let next = penalized_step(&data, op_ref, m, &slices[m - 1], &shape, opts, tol, &mut counters)
                .map_err(wrap)?;
            slices.push(next);
        }
        let slab = SlabField::new(st.clone(), slices)?;
        let complementarity = data.complementarity(&slab)?;
        report.outer_iters += counters.outer;
        report.inner_iters += counters.inner;
        report.fixed_point_residual = counters.worst_residual;
        report.eps_last = eps;
        report.complementarity = complementarity;
        report.stages.push(StageRecord {
            eps,
            iterations: counters.outer,
            fixed_point_residual: counters.worst_residual,
            complementarity,
        });
        result = Some(slab);
    }
    Ok((result.expect("schedule is nonempty"), report))
}

/// `min (u - psi + eps t)` over the slab; the shifted lower barrier says it
/// is nonnegative up to tolerance.
pub fn shifted_barrier_margin(u: &SlabField, psi: &SlabField, eps: f64) -> Result<f64> {
    u.check_grid(psi)?;
    let st = u.grid();
    let mut worst = f64::INFINITY;
    for m in 0..u.slices().len() {
        let t = st.time(m);
        for (a, b) in u.slice(m).values().iter().zip(psi.slice(m).values()) {
            worst = worst.min(a - b + eps * t);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::SymMat;
    use crate::geometry::{build_grid, DomainPreset};

    fn setup(cells: usize, t: f64, steps: usize) -> (Arc<SpaceTimeGrid>, Vec<MatrixField>) {
        let g = build_grid(DomainPreset::Interval, cells).unwrap();
        let st = SpaceTimeGrid::new(g.clone(), t, steps).unwrap();
        (st, vec![MatrixField::constant(&g, SymMat::identity())])
    }

    #[test]
    fn zero_data_stay_zero() {
        let (st, a) = setup(16, 1.0, 10);
        let g = st.base();
        let u = step_implicit(&a[0], &ScalarField::zeros(g), 0.1, &ScalarField::zeros(g)).unwrap();
        assert_eq!(u.max_abs(), 0.0);
        let p = ParabolicProblem::new(a, SlabField::constant(&st, 0.0), SlabField::constant(&st, -1.0), Pipeline::Raw)
            .unwrap();
        let (u, _) = solve_parabolic_obstacle(&p, &[0.1, 0.05]).unwrap();
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn constant_initial_state_relaxes_within_range() {
        let (st, a) = setup(20, 1.0, 10);
        let g = st.base();
        let u = step_implicit(&a[0], &ScalarField::constant(g, 3.0), 0.01, &ScalarField::zeros(g)).unwrap();
        for &s in g.interior_slots() {
            assert!(u.values()[s] > 0.0 && u.values()[s] < 3.0);
        }
    }

    #[test]
    fn positive_initial_obstacle_is_rejected() {
        let (st, a) = setup(8, 1.0, 4);
        let psi = SlabField::constant(&st, 0.2);
        let r = ParabolicProblem::new(a, SlabField::constant(&st, 0.0), psi, Pipeline::Raw);
        assert!(matches!(r, Err(Error::ObstacleOnBoundary { .. })));
    }

    #[test]
    fn inactive_penalty_matches_unconstrained_march() {
        let (st, a) = setup(32, 0.5, 20);
        let f = SlabField::constant(&st, 1.0);
        // g = -f - psi'' = -1 < 0 for psi = -1
        let psi = SlabField::constant(&st, -1.0);
        let p = ParabolicProblem::new(a.clone(), f.clone(), psi, Pipeline::Raw).unwrap();
        let (u, _) = solve_parabolic_obstacle(&p, &[0.05]).unwrap();
        let free = solve_parabolic_unconstrained(&a, &f).unwrap();
        assert_eq!(u.max_diff(&free).unwrap(), 0.0);
    }

    #[test]
    fn picard_and_newton_steps_agree() {
        let (st, a) = setup(32, 0.5, 10);
        let psi = SlabField::constant(&st, -0.5);
        let f = SlabField::constant(&st, -2.0);
        let p = ParabolicProblem::new(a, f, psi, Pipeline::Raw).unwrap();
        let (un, _) = solve_parabolic_obstacle(&p, &[0.05]).unwrap();
        let (up, _) = solve_parabolic_obstacle_with(&p, &[0.05], &FixedPointOptions::picard(0.2, 2000)).unwrap();
        assert!(un.max_diff(&up).unwrap() < 1e-6);
    }
}
