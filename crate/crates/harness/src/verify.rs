//! Invariant checks against a stored record.

use std::fs;
use std::path::Path;

use obstacle_core::calculus::OperatorFamily;
use obstacle_core::elliptic::{subsolution_defect, PenalizedProblem};
use obstacle_core::geometry::build_grid;
use obstacle_core::penalty::PenaltyShape;
use serde::Serialize;

use crate::config::ProblemKind;
use crate::run::{field_as_scalar, read_field, read_record, run, NORMS_FILE};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub config_hash: String,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        pass,
        detail,
    }
}

/// Rechecks the stored residuals, recomputes the elliptic subsolution
/// defect from `u.bin`, and re-solves to compare `norms.csv` bytes.
pub fn verify(dir: &Path) -> anyhow::Result<VerifyReport> {
    let (cfg, record) = read_record(dir)?;
    let field = read_field(dir)?;
    let r = &record.residuals;
    let mut checks = vec![check(
        "config-hash",
        cfg.hash() == record.config_hash,
        format!("config {} vs record {}", cfg.hash(), record.config_hash),
    )];
    checks.push(check(
        "fixed-point",
        r.fixed_point <= r.tol_fp,
        format!("{:e} <= {:e}", r.fixed_point, r.tol_fp),
    ));
    checks.push(check(
        "obstacle",
        r.obstacle_violation <= r.tol_obstacle,
        format!("max (psi - u)+ = {:e} <= {:e}", r.obstacle_violation, r.tol_obstacle),
    ));
    checks.push(check(
        "one-sided-equation",
        r.equation_defect <= r.tol_fp,
        format!("{:e} <= {:e}", r.equation_defect, r.tol_fp),
    ));
    if let Some(margin) = r.shift_margin {
        checks.push(check(
            "shift-bound",
            margin >= -r.tol_fp,
            format!("min (u - psi + eps t) = {margin:e}"),
        ));
    }
    if cfg.kind != ProblemKind::LinearParabolic {
        let grid = build_grid(cfg.domain.preset, cfg.domain.resolution)?;
        let problem = PenalizedProblem::new(
            OperatorFamily::from_presets(&cfg.coefficients, &grid)?,
            cfg.f.sample(&grid)?,
            cfg.psi.sample(&grid)?,
            PenaltyShape::new(cfg.eps.eps0)?,
            cfg.pipeline,
        )?;
        let data = problem.prepared()?;
        let u = field_as_scalar(&cfg, &field, 0)?;
        let d = subsolution_defect(&data.family, &u, &data.f)?;
        checks.push(check("stored-field-defect", d <= r.tol_fp, format!("{d:e} <= {:e}", r.tol_fp)));
    }
    let stored = fs::read(dir.join(NORMS_FILE))?;
    let rerun = run(&cfg)?;
    let same = rerun.record.norms_csv().as_bytes() == stored.as_slice();
    checks.push(check(
        "norms-reproducible",
        same,
        if same { "byte-identical".into() } else { "norms.csv differs after re-run".into() },
    ));
    Ok(VerifyReport {
        config_hash: record.config_hash,
        checks,
    })
}
