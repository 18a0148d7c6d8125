//! Dirichlet solves for linear and Bellman operators, the penalized
//! fixed-point map `S` and continuation in `eps`.
//!
//! `S(v)` solves `F(D^2 w) = g+ phi_eps(v - psi) + f - g+` with zero boundary
//! data. Its fixed point is found either by damped Picard iteration on `S`
//! or by a Newton iteration on `F(D^2 u) - rhs(u) = 0`; both stop on the
//! same criterion `|u - S(u)|_inf <= tol_fp`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::calculus::{
    apply_linear, apply_operator, apply_with_policy, check_monotone, linear_action, mollify,
    OperatorFamily,
};
use crate::error::{Error, Result};
use crate::field::{MatrixField, ScalarField};
use crate::geometry::Grid;
use crate::linalg::{assemble, LinearSolver, LINEAR_TOL};
use crate::norms::{complementarity_residual, Complementarity};
use crate::penalty::{assemble_g_elliptic, penalized_rhs_elliptic, validate_schedule, PenaltyShape};

const BOUNDARY_TOL: f64 = 1e-12;
const MAX_POLICY_ITERS: usize = 200;
const MAX_VALUE_ITERS: usize = 2_000_000;

/// How the data enter the solver.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Pipeline {
    #[default]
    Raw,
    /// Coefficients, `f` and `psi` are mollified with the given radius first.
    Mollified { radius: f64 },
}

/// Iteration used to reach the fixed point of `S`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FixedPointMethod {
    #[default]
    Newton,
    Picard { omega: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedPointOptions {
    pub method: FixedPointMethod,
    pub max_iters: usize,
    /// `tol_fp = tol_scale (1 + |f|_inf + |g+|_inf)`.
    pub tol_scale: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            method: FixedPointMethod::Newton,
            max_iters: 200,
            tol_scale: 1e-8,
        }
    }
}

impl FixedPointOptions {
    pub fn picard(omega: f64, max_iters: usize) -> Self {
        FixedPointOptions {
            method: FixedPointMethod::Picard { omega },
            max_iters,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if let FixedPointMethod::Picard { omega } = self.method {
            if !(omega > 0.0 && omega <= 1.0) {
                return Err(Error::param("omega", format!("{omega} is not in (0, 1]")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be positive"));
        }
        if !(self.tol_scale > 0.0) {
            return Err(Error::param("tol_scale", "must be positive"));
        }
        Ok(())
    }
}

/// Data of the penalized elliptic obstacle problem.
#[derive(Debug, Clone)]
pub struct PenalizedProblem {
    family: OperatorFamily,
    f: ScalarField,
    psi: ScalarField,
    shape: PenaltyShape,
    pipeline: Pipeline,
}

impl PenalizedProblem {
    pub fn new(
        family: OperatorFamily,
        f: ScalarField,
        psi: ScalarField,
        shape: PenaltyShape,
        pipeline: Pipeline,
    ) -> Result<Self> {
        if !Grid::same(family.grid(), f.grid()) {
            return Err(Error::GridMismatch);
        }
        f.check_grid(&psi)?;
        family.check_monotone()?;
        check_boundary_obstacle(&psi)?;
        if let Pipeline::Mollified { radius } = pipeline {
            if !(radius >= f.grid().h()) {
                return Err(Error::param(
                    "radius",
                    format!("mollifier radius {radius} is below the mesh width {}", f.grid().h()),
                ));
            }
        }
        Ok(PenalizedProblem {
            family,
            f,
            psi,
            shape,
            pipeline,
        })
    }

    pub fn family(&self) -> &OperatorFamily {
        &self.family
    }

    pub fn f(&self) -> &ScalarField {
        &self.f
    }

    pub fn psi(&self) -> &ScalarField {
        &self.psi
    }

    pub fn shape(&self) -> PenaltyShape {
        self.shape
    }

    pub fn pipeline(&self) -> Pipeline {
        self.pipeline
    }

    pub fn grid(&self) -> &std::sync::Arc<Grid> {
        self.f.grid()
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Ok(PenalizedProblem {
            shape: PenaltyShape::new(eps)?,
            ..self.clone()
        })
    }

    /// Data after the pipeline: the fields the solver actually sees.
    pub fn prepared(&self) -> Result<PreparedData> {
        let (family, f, psi) = match self.pipeline {
            Pipeline::Raw => (self.family.clone(), self.f.clone(), self.psi.clone()),
            Pipeline::Mollified { radius } => {
                let family = self.family.map_members(|a| mollify(a, radius))?;
                family.check_monotone()?;
                let psi = mollify(&self.psi, radius)?;
                check_boundary_obstacle(&psi)?;
                (family, mollify(&self.f, radius)?, psi)
            }
        };
        let g = assemble_g_elliptic(&family, &f, &psi)?;
        Ok(PreparedData { family, f, psi, g })
    }
}

/// Effective data of a [`PenalizedProblem`] together with `g = f - F(D^2 psi)`.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub family: OperatorFamily,
    pub f: ScalarField,
    pub psi: ScalarField,
    pub g: ScalarField,
}

impl PreparedData {
    pub fn tol_fp(&self, scale: f64) -> f64 {
        let g_plus = self.g.values().iter().fold(0.0f64, |m, v| m.max(*v));
        scale * (1.0 + self.f.max_abs() + g_plus)
    }

    pub fn complementarity(&self, u: &ScalarField) -> Result<Complementarity> {
        let lu = apply_operator(&self.family, u)?;
        complementarity_residual(u, &self.psi, &lu, &self.f)
    }
}

fn check_boundary_obstacle(psi: &ScalarField) -> Result<()> {
    let grid = psi.grid();
    for s in grid.boundary_slots() {
        let v = psi.values()[s];
        if v > BOUNDARY_TOL {
            return Err(Error::ObstacleOnBoundary { node: s, value: v });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub eps: f64,
    pub iterations: usize,
    pub fixed_point_residual: f64,
    pub complementarity: Complementarity,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub fixed_point_residual: f64,
    pub tol_fp: f64,
    pub eps_last: f64,
    pub complementarity: Complementarity,
    pub norm_table: Vec<(String, f64)>,
    pub stages: Vec<StageRecord>,
    /// Max-norm residual history of the last stage.
    pub history: Vec<f64>,
}

fn to_unknowns(grid: &Grid, v: &ScalarField) -> Vec<f64> {
    grid.interior_slots().iter().map(|&s| v.values()[s]).collect()
}

fn from_unknowns(grid: &std::sync::Arc<Grid>, x: &[f64]) -> Result<ScalarField> {
    let mut out = vec![0.0; grid.active_len()];
    for (idx, &s) in grid.interior_slots().iter().enumerate() {
        out[s] = x[idx];
    }
    ScalarField::new(grid.clone(), out)
}

fn linear_solver(a: &MatrixField) -> Result<LinearSolver> {
    let grid = a.grid();
    let slots = grid.interior_slots();
    LinearSolver::new(assemble(grid, |idx| a.at(slots[idx]), |_| 0.0))
}

/// Solves `a_ij D_ij u = rhs` at interior nodes with `u = 0` on the boundary.
pub fn solve_linear_dirichlet(a: &MatrixField, rhs: &ScalarField) -> Result<ScalarField> {
    check_monotone(a)?;
    if !Grid::same(a.grid(), rhs.grid()) {
        return Err(Error::GridMismatch);
    }
    let grid = a.grid();
    let x = linear_solver(a)?.solve(&to_unknowns(grid, rhs))?;
    from_unknowns(grid, &x)
}

/// As [`solve_linear_dirichlet`] with prescribed values at non-interior nodes.
pub fn solve_linear_with_boundary(
    a: &MatrixField,
    rhs: &ScalarField,
    boundary: &ScalarField,
) -> Result<ScalarField> {
    rhs.check_grid(boundary)?;
    let grid = rhs.grid();
    let mut lifted = boundary.clone();
    for &s in grid.interior_slots() {
        lifted.values_mut()[s] = 0.0;
    }
    let shifted = rhs.zip_map(&apply_linear(a, &lifted)?, |r, l| r - l)?;
    let mut u = solve_linear_dirichlet(a, &shifted)?;
    for s in grid.boundary_slots() {
        u.values_mut()[s] = boundary.values()[s];
    }
    Ok(u)
}

/// Solves `max_k a^k_ij D_ij u = rhs` with zero boundary data by policy
/// iteration.
pub fn solve_bellman_dirichlet(family: &OperatorFamily, rhs: &ScalarField) -> Result<ScalarField> {
    bellman_solve(family, rhs, None).map(|(u, _, _)| u)
}

/// Solution of the linear system with member `policy[idx]` frozen at each
/// interior node.
pub fn solve_with_policy(
    family: &OperatorFamily,
    policy: &[usize],
    rhs: &ScalarField,
) -> Result<ScalarField> {
    let grid = family.grid();
    let slots = grid.interior_slots();
    let m = assemble(grid, |idx| family.members()[policy[idx]].at(slots[idx]), |_| 0.0);
    let x = LinearSolver::new(m)?.solve(&to_unknowns(grid, rhs))?;
    from_unknowns(grid, &x)
}

/// Greedy policy on `u`; a member replaces the current one only if it is
/// strictly better, which rules out cycling between tied members.
fn improve_policy(family: &OperatorFamily, u: &ScalarField, current: &[usize]) -> Vec<usize> {
    let grid = family.grid();
    let members = family.members();
    grid.interior_slots()
        .iter()
        .enumerate()
        .map(|(idx, &slot)| {
            let mut best_k = current[idx];
            let mut best = linear_action(grid, &members[best_k].at(slot), idx, u.values());
            for (k, a) in members.iter().enumerate() {
                let v = linear_action(grid, &a.at(slot), idx, u.values());
                if v > best + 1e-13 * (1.0 + best.abs()) {
                    best = v;
                    best_k = k;
                }
            }
            best_k
        })
        .collect()
}

fn bellman_residual(family: &OperatorFamily, u: &ScalarField, rhs: &ScalarField) -> Result<f64> {
    let fu = apply_operator(family, u)?;
    Ok(family
        .grid()
        .interior_slots()
        .iter()
        .fold(0.0f64, |m, &s| m.max((fu.values()[s] - rhs.values()[s]).abs())))
}

/// Policy iteration; returns the solution, the final policy and the number
/// of linear solves.
pub(crate) fn bellman_solve(
    family: &OperatorFamily,
    rhs: &ScalarField,
    warm: Option<&[usize]>,
) -> Result<(ScalarField, Vec<usize>, usize)> {
    family.check_monotone()?;
    if !Grid::same(family.grid(), rhs.grid()) {
        return Err(Error::GridMismatch);
    }
    let grid = family.grid();
    let mut policy = match warm {
        Some(p) => p.to_vec(),
        None => vec![0; grid.interior_len()],
    };
    let scale = 1.0 + rhs.max_abs();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut history = Vec::new();
    let mut u = ScalarField::zeros(grid);
    for it in 0..MAX_POLICY_ITERS {
        seen.insert(policy.clone());
        u = solve_with_policy(family, &policy, rhs)?;
        if family.is_linear() {
            return Ok((u, policy, it + 1));
        }
        let next = improve_policy(family, &u, &policy);
        let res = bellman_residual(family, &u, rhs)?;
        history.push(res);
        if next == policy {
            if res <= LINEAR_TOL * scale {
                return Ok((u, policy, it + 1));
            }
            break;
        }
        if seen.contains(&next) {
            break;
        }
        policy = next;
    }
    let iters = history.len();
    let u = value_iteration(family, rhs, u)?;
    let (_, policy) = apply_with_policy(family, &u)?;
    Ok((u, policy, iters))
}

/// Damped explicit relaxation `u <- u + tau (F(D^2 u) - rhs)`; stable for
/// `tau` below the inverse of the largest diagonal weight.
fn value_iteration(family: &OperatorFamily, rhs: &ScalarField, mut u: ScalarField) -> Result<ScalarField> {
    let grid = family.grid().clone();
    let dim = grid.dim();
    let h2 = grid.h() * grid.h();
    let mut diag: f64 = 0.0;
    for a in family.members() {
        for &s in grid.interior_slots() {
            let m = a.at(s);
            let d = if dim == 1 { 2.0 * m.a11 } else { 2.0 * (m.a11 + m.a22 - m.a12.abs()) };
            diag = diag.max(d / h2);
        }
    }
    let tau = 0.9 / diag;
    let tol = LINEAR_TOL * (1.0 + rhs.max_abs());
    let mut history = Vec::new();
    for it in 0..MAX_VALUE_ITERS {
        let fu = apply_operator(family, &u)?;
        let mut res: f64 = 0.0;
        for &s in grid.interior_slots() {
            let r = fu.values()[s] - rhs.values()[s];
            res = res.max(r.abs());
            u.values_mut()[s] += tau * r;
        }
        if it % 1000 == 0 {
            history.push(res);
        }
        if res <= tol {
            return Ok(u);
        }
    }
    Err(Error::not_converged("value iteration", &history))
}

/// One realization of `S` with a cached factorization in the linear case.
struct MapS<'a> {
    data: &'a PreparedData,
    shape: PenaltyShape,
    linear: Option<LinearSolver>,
    policy: Vec<usize>,
    solves: usize,
}

impl<'a> MapS<'a> {
    fn new(data: &'a PreparedData, shape: PenaltyShape) -> Result<Self> {
        let linear = if data.family.is_linear() {
            Some(linear_solver(&data.family.members()[0])?)
        } else {
            None
        };
        Ok(MapS {
            data,
            shape,
            linear,
            policy: vec![0; data.f.grid().interior_len()],
            solves: 0,
        })
    }

    fn rhs(&self, v: &ScalarField) -> Result<ScalarField> {
        penalized_rhs_elliptic(&self.data.g, &self.data.f, v, &self.data.psi, &self.shape)
    }

    fn solve(&mut self, rhs: &ScalarField) -> Result<ScalarField> {
        let grid = rhs.grid();
        match &self.linear {
            Some(solver) => {
                self.solves += 1;
                from_unknowns(grid, &solver.solve(&to_unknowns(grid, rhs))?)
            }
            None => {
                let (u, policy, n) = bellman_solve(&self.data.family, rhs, Some(&self.policy))?;
                self.policy = policy;
                self.solves += n;
                Ok(u)
            }
        }
    }

    fn apply(&mut self, v: &ScalarField) -> Result<ScalarField> {
        let rhs = self.rhs(v)?;
        self.solve(&rhs)
    }
}

/// Unconstrained solve `F(D^2 u) = f`, the default initial iterate.
pub fn unconstrained_solve(family: &OperatorFamily, f: &ScalarField) -> Result<ScalarField> {
    solve_bellman_dirichlet(family, f)
}

/// Fixed point of `S` for one `eps`, started from the unconstrained solve.
pub fn fixed_point_penalized(problem: &PenalizedProblem) -> Result<(ScalarField, SolverReport)> {
    fixed_point_penalized_with(problem, None, &FixedPointOptions::default())
}

pub fn fixed_point_penalized_with(
    problem: &PenalizedProblem,
    init: Option<&ScalarField>,
    opts: &FixedPointOptions,
) -> Result<(ScalarField, SolverReport)> {
    let data = problem.prepared()?;
    fixed_point_prepared(&data, problem.shape(), init, opts)
}

/// [`fixed_point_penalized_with`] on already prepared data.
pub fn fixed_point_prepared(
    data: &PreparedData,
    shape: PenaltyShape,
    init: Option<&ScalarField>,
    opts: &FixedPointOptions,
) -> Result<(ScalarField, SolverReport)> {
    opts.validate()?;
    let grid = data.f.grid().clone();
    let tol = data.tol_fp(opts.tol_scale);
    let mut map = MapS::new(data, shape)?;
    let mut u = match init {
        Some(u0) => {
            u0.check_grid(&data.f)?;
            let mut u = u0.clone();
            for s in grid.boundary_slots() {
                u.values_mut()[s] = 0.0;
            }
            u
        }
        None => map.solve(&data.f)?,
    };
    let mut history = Vec::new();
    let mut outer = 0;
    let residual = loop {
        let su = map.apply(&u)?;
        let r = u.max_diff(&su)?;
        history.push(r);
        if !r.is_finite() {
            return Err(Error::not_converged("penalized fixed point", &history));
        }
        if r <= tol {
            break r;
        }
        if outer >= opts.max_iters {
            return Err(Error::not_converged("penalized fixed point", &history));
        }
        outer += 1;
        u = match opts.method {
            FixedPointMethod::Picard { omega } => u.zip_map(&su, |a, b| (1.0 - omega) * a + omega * b)?,
            FixedPointMethod::Newton => newton_step(data, &shape, &u, &mut map)?,
        };
    };
    let complementarity = data.complementarity(&u)?;
    let report = SolverReport {
        outer_iters: outer,
        inner_iters: map.solves,
        fixed_point_residual: residual,
        tol_fp: tol,
        eps_last: shape.eps(),
        complementarity,
        norm_table: Vec::new(),
        stages: vec![StageRecord {
            eps: shape.eps(),
            iterations: outer,
            fixed_point_residual: residual,
            complementarity,
        }],
        history,
    };
    Ok((u, report))
}

/// `G(u) = F(D^2 u) - rhs(u)` at interior nodes, with the active policy.
fn newton_residual(
    data: &PreparedData,
    map: &MapS,
    u: &ScalarField,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let grid = data.f.grid();
    let (fu, policy) = apply_with_policy(&data.family, u)?;
    let rhs = map.rhs(u)?;
    let g = grid
        .interior_slots()
        .iter()
        .map(|&s| fu.values()[s] - rhs.values()[s])
        .collect();
    Ok((g, policy))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One damped Newton step on `G`. The Jacobian `L^sigma - diag(g+ phi')`
/// is an M-matrix up to sign, so the banded factorization applies.
fn newton_step(
    data: &PreparedData,
    shape: &PenaltyShape,
    u: &ScalarField,
    map: &mut MapS,
) -> Result<ScalarField> {
    let grid = data.f.grid().clone();
    let slots = grid.interior_slots();
    let (res, policy) = newton_residual(data, map, u)?;
    let members = data.family.members();
    let (g, psi) = (data.g.values(), data.psi.values());
    let jac = assemble(
        &grid,
        |idx| members[policy[idx]].at(slots[idx]),
        |idx| {
            let s = slots[idx];
            -g[s].max(0.0) * shape.phi_prime(u.values()[s] - psi[s])
        },
    );
    let neg: Vec<f64> = res.iter().map(|r| -r).collect();
    let delta = LinearSolver::new(jac)?.solve(&neg)?;
    map.solves += 1;
    let base = norm2(&res);
    let mut alpha = 1.0;
    let mut trial = u.clone();
    loop {
        for (idx, &s) in slots.iter().enumerate() {
            trial.values_mut()[s] = u.values()[s] + alpha * delta[idx];
        }
        let (r, _) = newton_residual(data, map, &trial)?;
        if norm2(&r) <= (1.0 - 1e-4 * alpha) * base || alpha < 1e-6 || base == 0.0 {
            return Ok(trial);
        }
        alpha *= 0.5;
    }
}

/// Runs the fixed-point solver down a decreasing `eps` schedule, warm
/// starting every stage from the previous one.
pub fn continuation_solve(problem: &PenalizedProblem, schedule: &[f64]) -> Result<(ScalarField, SolverReport)> {
    continuation_solve_with(problem, schedule, None, &FixedPointOptions::default())
}

pub fn continuation_solve_with(
    problem: &PenalizedProblem,
    schedule: &[f64],
    init: Option<&ScalarField>,
    opts: &FixedPointOptions,
) -> Result<(ScalarField, SolverReport)> {
    validate_schedule(schedule)?;
    let data = problem.prepared()?;
    let mut u = init.cloned();
    let mut total = SolverReport::default();
    for (k, &eps) in schedule.iter().enumerate() {
        let wrap = |e: Error| Error::Stage {
            stage: k,
            eps,
            source: Box::new(e),
        };
        let shape = PenaltyShape::new(eps).map_err(wrap)?;
        let (next, rep) = fixed_point_prepared(&data, shape, u.as_ref(), opts).map_err(wrap)?;
        total.outer_iters += rep.outer_iters;
        total.inner_iters += rep.inner_iters;
        total.fixed_point_residual = rep.fixed_point_residual;
        total.tol_fp = rep.tol_fp;
        total.eps_last = eps;
        total.complementarity = rep.complementarity;
        total.history = rep.history;
        total.stages.extend(rep.stages);
        u = Some(next);
    }
    Ok((u.expect("schedule is nonempty"), total))
}

/// Audits the discrete comparison principle on `u`: returns false only if
/// `a_ij D_ij u <= 0` inside and `u >= 0` on the boundary, yet `u` dips
/// below `-tol` somewhere.
pub fn check_comparison(a: &MatrixField, u: &ScalarField) -> Result<bool> {
    let lu = apply_linear(a, u)?;
    let grid = a.grid();
    let scale = 1.0 + u.max_abs();
    let tol = 1e-10 * scale;
    let sub = grid
        .interior_slots()
        .iter()
        .all(|&s| lu.values()[s] <= 0.0);
    let boundary = grid.boundary_slots().all(|s| u.values()[s] >= 0.0);
    if !(sub && boundary) {
        return Ok(true);
    }
    Ok(u.min() >= -tol)
}

/// `max(F(D^2 u) - f)` over interior nodes, the subsolution defect.
pub fn subsolution_defect(family: &OperatorFamily, u: &ScalarField, f: &ScalarField) -> Result<f64> {
    let fu = apply_operator(family, u)?;
    let grid = family.grid();
    Ok(grid
        .interior_slots()
        .iter()
        .fold(f64::NEG_INFINITY, |m, &s| m.max(fu.values()[s] - f.values()[s])))
}

/// `max |F(D^2 u) - f|` over interior nodes where `u - psi > gap`.
pub fn equation_defect_off_contact(
    family: &OperatorFamily,
    u: &ScalarField,
    f: &ScalarField,
    psi: &ScalarField,
    gap: f64,
) -> Result<f64> {
    let fu = apply_operator(family, u)?;
    Ok(family.grid().interior_slots().iter().fold(0.0f64, |m, &s| {
        if u.values()[s] - psi.values()[s] > gap {
            m.max((fu.values()[s] - f.values()[s]).abs())
        } else {
            m
        }
    }))
}
