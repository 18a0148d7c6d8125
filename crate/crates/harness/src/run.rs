//! Dispatch a config to its solver and write the record files.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context};
use obstacle_core::calculus::OperatorFamily;
use obstacle_core::elliptic::{continuation_solve_with, subsolution_defect, PenalizedProblem, StageRecord};
use obstacle_core::field::{MatrixField, ScalarField, SlabField};
use obstacle_core::geometry::{build_grid, Grid, SpaceTimeGrid};
use obstacle_core::norms::Complementarity;
use obstacle_core::parabolic::{parabolic_operator, shifted_barrier_margin, solve_parabolic_obstacle_with, ParabolicProblem};
use obstacle_core::penalty::PenaltyShape;
use serde::{Deserialize, Serialize};

use crate::analysis::{elliptic_norms, norms_csv, parabolic_norms, NormRow};
use crate::config::{ProblemConfig, ProblemKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub fixed_point: f64,
    pub tol_fp: f64,
    /// `eps_last + 10 tol_fp`.
    pub tol_obstacle: f64,
    pub complementarity: Complementarity,
    /// `max (psi - u)+` over all nodes (and levels).
    pub obstacle_violation: f64,
    /// Elliptic: `max (Lu - f)+`; parabolic: `max (f - u_t + Lu)+`.
    pub equation_defect: f64,
    /// Parabolic only: `min (u - psi + eps_last t)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub eps_last: f64,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config_hash: String,
    pub kind: ProblemKind,
    pub provenance: String,
    pub solver: SolverSummary,
    pub residuals: Residuals,
    pub norms: Vec<NormRow>,
    /// Wall-clock data; not part of the reproducible content.
    pub timing: Timing,
}

impl ExperimentRecord {
    pub fn norms_csv(&self) -> String {
        norms_csv(&self.config_hash, &self.norms)
    }

    pub fn norm(&self, name: &str) -> Option<f64> {
        self.norms.iter().find(|r| r.norm == name).map(|r| r.value)
    }
}

/// Solution values, level-major, in active-slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredField {
    pub levels: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub dtype: String,
    pub layout: String,
    pub preset: obstacle_core::geometry::DomainPreset,
    pub resolution: usize,
    pub dim: usize,
    pub h: f64,
    pub side: usize,
    pub active_len: usize,
    pub levels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Lattice indices `(i, j)` of every active slot.
    pub slots: Vec<(usize, usize)>,
}

pub struct RunOutput {
    pub record: ExperimentRecord,
    pub field: StoredField,
}

pub fn provenance(hash: &str) -> String {
    format!("obstacle-harness/{} config/{hash}", env!("CARGO_PKG_VERSION"))
}

fn grid_of(cfg: &ProblemConfig) -> anyhow::Result<Arc<Grid>> {
    Ok(build_grid(cfg.domain.preset, cfg.domain.resolution)?)
}

fn family_of(cfg: &ProblemConfig, grid: &Arc<Grid>) -> anyhow::Result<OperatorFamily> {
    Ok(OperatorFamily::from_presets(&cfg.coefficients, grid)?)
}

/// Validates and solves; no files are written.
pub fn run(cfg: &ProblemConfig) -> anyhow::Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let hash = cfg.hash();
    let (solver, residuals, norms, field) = match cfg.kind {
        ProblemKind::LinearElliptic | ProblemKind::BellmanElliptic => run_elliptic(cfg)?,
        ProblemKind::LinearParabolic => run_parabolic(cfg)?,
    };
    let record = ExperimentRecord {
        config_hash: hash.clone(),
        kind: cfg.kind,
        provenance: provenance(&hash),
        solver,
        residuals,
        norms,
        timing: Timing {
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    };
    Ok(RunOutput { record, field })
}

type Parts = (SolverSummary, Residuals, Vec<NormRow>, StoredField);

fn run_elliptic(cfg: &ProblemConfig) -> anyhow::Result<Parts> {
    let grid = grid_of(cfg)?;
    let family = family_of(cfg, &grid)?;
    let f = cfg.f.sample(&grid)?;
    let psi = cfg.psi.sample(&grid)?;
    let problem = PenalizedProblem::new(family, f, psi, PenaltyShape::new(cfg.eps.eps0)?, cfg.pipeline)?;
    let (u, report) = continuation_solve_with(&problem, &cfg.eps.values(), None, &cfg.tolerances.options())?;
    let data = problem.prepared()?;
    let residuals = Residuals {
        fixed_point: report.fixed_point_residual,
        tol_fp: report.tol_fp,
        tol_obstacle: report.eps_last + 10.0 * report.tol_fp,
        complementarity: report.complementarity,
        obstacle_violation: obstacle_violation(&u, &data.psi),
        equation_defect: subsolution_defect(&data.family, &u, &data.f)?,
        shift_margin: None,
    };
    let norms = elliptic_norms(cfg, &data.family, &u, &data.f, &data.psi)?;
    let solver = SolverSummary {
        outer_iters: report.outer_iters,
        inner_iters: report.inner_iters,
        eps_last: report.eps_last,
        stages: report.stages,
    };
    let field = StoredField {
        levels: 1,
        values: u.into_values(),
    };
    Ok((solver, residuals, norms, field))
}

fn obstacle_violation(u: &ScalarField, psi: &ScalarField) -> f64 {
    u.values()
        .iter()
        .zip(psi.values())
        .map(|(a, b)| (b - a).max(0.0))
        .fold(0.0, f64::max)
}

fn space_time(cfg: &ProblemConfig, grid: &Arc<Grid>) -> anyhow::Result<Arc<SpaceTimeGrid>> {
    let Some(ts) = cfg.time else {
        bail!("a parabolic run needs a time grid");
    };
    Ok(SpaceTimeGrid::new(grid.clone(), ts.t_final, ts.steps)?)
}

fn run_parabolic(cfg: &ProblemConfig) -> anyhow::Result<Parts> {
    let grid = grid_of(cfg)?;
    let st = space_time(cfg, &grid)?;
    let family = family_of(cfg, &grid)?;
    let coeffs: Vec<MatrixField> = family.members().to_vec();
    let f = cfg.f.sample_slab(&st)?;
    let psi = cfg.psi.sample_slab(&st)?;
    let problem = ParabolicProblem::new(coeffs, f, psi, cfg.pipeline)?;
    let (u, report) = solve_parabolic_obstacle_with(&problem, &cfg.eps.values(), &cfg.tolerances.options())?;
    let data = problem.prepared()?;
    let pu = parabolic_operator(&data.coeffs, &u)?;
    let mut defect: f64 = 0.0;
    let mut violation: f64 = 0.0;
    for m in 0..u.slices().len() {
        violation = violation.max(obstacle_violation(u.slice(m), data.psi.slice(m)));
        if m > 0 {
            for &s in grid.interior_slots() {
                defect = defect.max(data.f.slice(m).values()[s] - pu.slice(m).values()[s]);
            }
        }
    }
    let residuals = Residuals {
        fixed_point: report.fixed_point_residual,
        tol_fp: report.tol_fp,
        tol_obstacle: report.eps_last + 10.0 * report.tol_fp,
        complementarity: report.complementarity,
        obstacle_violation: violation,
        equation_defect: defect.max(0.0),
        shift_margin: Some(shifted_barrier_margin(&u, &data.psi, report.eps_last)?),
    };
    let norms = parabolic_norms(cfg, &st, &data.coeffs, &u, &data.f, &data.psi)?;
    let solver = SolverSummary {
        outer_iters: report.outer_iters,
        inner_iters: report.inner_iters,
        eps_last: report.eps_last,
        stages: report.stages,
    };
    let levels = u.slices().len();
    let values = u.slices().iter().flat_map(|s| s.values().iter().copied()).collect();
    Ok((solver, residuals, norms, StoredField { levels, values }))
}

/// Recomputes the norm table from a stored field without solving.
pub fn norms_from_field(cfg: &ProblemConfig, field: &StoredField) -> anyhow::Result<Vec<NormRow>> {
    cfg.validate()?;
    let grid = grid_of(cfg)?;
    let n = grid.active_len();
    if field.values.len() != n * field.levels {
        bail!("stored field has {} values, expected {} x {n}", field.values.len(), field.levels);
    }
    let slice = |m: usize| ScalarField::new(grid.clone(), field.values[m * n..(m + 1) * n].to_vec());
    match cfg.kind {
        ProblemKind::LinearParabolic => {
            let st = space_time(cfg, &grid)?;
            if field.levels != st.steps() + 1 {
                bail!("stored field has {} levels, expected {}", field.levels, st.steps() + 1);
            }
            let u = SlabField::new(st.clone(), (0..field.levels).map(slice).collect::<Result<_, _>>()?)?;
            let family = family_of(cfg, &grid)?;
            let problem = ParabolicProblem::new(
                family.members().to_vec(),
                cfg.f.sample_slab(&st)?,
                cfg.psi.sample_slab(&st)?,
                cfg.pipeline,
            )?;
            let data = problem.prepared()?;
            Ok(parabolic_norms(cfg, &st, &data.coeffs, &u, &data.f, &data.psi)?)
        }
        _ => {
            if field.levels != 1 {
                bail!("an elliptic field has one level, got {}", field.levels);
            }
            let u = slice(0)?;
            let problem = PenalizedProblem::new(
                family_of(cfg, &grid)?,
                cfg.f.sample(&grid)?,
                cfg.psi.sample(&grid)?,
                PenaltyShape::new(cfg.eps.eps0)?,
                cfg.pipeline,
            )?;
            let data = problem.prepared()?;
            Ok(elliptic_norms(cfg, &data.family, &u, &data.f, &data.psi)?)
        }
    }
}

pub fn sidecar(cfg: &ProblemConfig, field: &StoredField) -> anyhow::Result<FieldSidecar> {
    let grid = grid_of(cfg)?;
    Ok(FieldSidecar {
        dtype: "f64-le".into(),
        layout: "level-major; active slots in row-major lattice order".into(),
        preset: cfg.domain.preset,
        resolution: cfg.domain.resolution,
        dim: grid.dim(),
        h: grid.h(),
        side: grid.side(),
        active_len: grid.active_len(),
        levels: field.levels,
        dt: cfg.time.map(|t| t.t_final / t.steps as f64),
        slots: (0..grid.active_len()).map(|s| grid.lattice_ij(s)).collect(),
    })
}

pub const RECORD_FILE: &str = "record.json";
pub const NORMS_FILE: &str = "norms.csv";
pub const FIELD_FILE: &str = "u.bin";
pub const SIDECAR_FILE: &str = "u.json";
pub const CONFIG_FILE: &str = "config.json";

/// Writes config, record, norm table and field into `dir`.
pub fn write_outputs(cfg: &ProblemConfig, out: &RunOutput, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(cfg)? + "\n")?;
    fs::write(dir.join(RECORD_FILE), serde_json::to_string_pretty(&out.record)? + "\n")?;
    fs::write(dir.join(NORMS_FILE), out.record.norms_csv())?;
    let bytes: Vec<u8> = out.field.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join(FIELD_FILE), bytes)?;
    fs::write(dir.join(SIDECAR_FILE), serde_json::to_string_pretty(&sidecar(cfg, &out.field)?)? + "\n")?;
    Ok(())
}

pub fn read_field(dir: &Path) -> anyhow::Result<StoredField> {
    let meta: FieldSidecar = serde_json::from_str(&fs::read_to_string(dir.join(SIDECAR_FILE))?)?;
    let bytes = fs::read(dir.join(FIELD_FILE))?;
    if bytes.len() != 8 * meta.active_len * meta.levels {
        bail!("{} has {} bytes, sidecar describes {}", FIELD_FILE, bytes.len(), 8 * meta.active_len * meta.levels);
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(StoredField {
        levels: meta.levels,
        values,
    })
}

pub fn read_record(dir: &Path) -> anyhow::Result<(ProblemConfig, ExperimentRecord)> {
    let cfg = ProblemConfig::load(&dir.join(CONFIG_FILE))?;
    let text = fs::read_to_string(dir.join(RECORD_FILE)).with_context(|| format!("reading {}", dir.display()))?;
    Ok((cfg, serde_json::from_str(&text)?))
}

/// Reconstructs the stored solution as a field on the config grid.
pub fn field_as_scalar(cfg: &ProblemConfig, field: &StoredField, level: usize) -> anyhow::Result<ScalarField> {
    let grid = grid_of(cfg)?;
    let n = grid.active_len();
    Ok(ScalarField::new(grid, field.values[level * n..(level + 1) * n].to_vec())?)
}
