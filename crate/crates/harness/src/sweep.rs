//! Parameter sweeps. Rows run concurrently on rayon; each row is an
//! independent run whose config is written under `configs/<hash>.json`.

use std::fs;
use std::path::Path;

use obstacle_core::calculus::CoefficientPreset;
use obstacle_core::norms::holder_exponent;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ProblemConfig, ProblemKind, ValidationError, Violations};
use crate::run::run;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CzSweepConfig {
    pub base: ProblemConfig,
    /// Factors `t` applied to `f`, `psi` and `eps0` together.
    pub scalings: Vec<f64>,
    pub resolutions: Vec<usize>,
    /// Coefficient families; defaults to the base one.
    #[serde(default)]
    pub families: Option<Vec<Vec<CoefficientPreset>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzRow {
    pub config_hash: String,
    pub family: String,
    pub resolution: usize,
    pub scaling: f64,
    pub u_norm: f64,
    pub f_norm: f64,
    pub psi_norm: f64,
    pub ratio: f64,
    pub error: Option<String>,
}

/// Boundedness report for one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzSummary {
    pub family: String,
    /// Largest max/min ratio over scalings at a fixed resolution.
    pub scaling_spread: f64,
    /// Largest max/min ratio over resolutions at a fixed scaling.
    pub grid_drift: f64,
    pub max_ratio: f64,
    pub failed_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzSweep {
    pub rows: Vec<CzRow>,
    pub summary: Vec<CzSummary>,
}

fn family_label(fam: &[CoefficientPreset]) -> String {
    fam.iter().map(|c| c.label()).collect::<Vec<_>>().join("+")
}

impl CzSweepConfig {
    pub fn families(&self) -> Vec<Vec<CoefficientPreset>> {
        self.families.clone().unwrap_or_else(|| vec![self.base.coefficients.clone()])
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut v = Violations::default();
        v.check(self.scalings.len() >= 3, "scalings", || {
            format!("need at least 3 scalings, got {}", self.scalings.len())
        });
        v.check(self.scalings.iter().all(|t| t.is_finite() && *t > 0.0), "scalings", || {
            "scalings must be positive".into()
        });
        v.check(self.resolutions.len() >= 2, "resolutions", || {
            format!("need at least 2 grid sizes, got {}", self.resolutions.len())
        });
        let fams = self.families();
        v.check(!fams.is_empty(), "families", || "the family list is empty".into());
        v.check(fams.iter().all(|f| !f.is_empty()), "families", || "a coefficient family is empty".into());
        if let Err(e) = self.base.validate() {
            for x in e.violations {
                v.push(&format!("base.{}", x.field), x.reason);
            }
        }
        v.finish()
    }

    /// Row configs in output order: family, resolution, scaling.
    pub fn row_configs(&self) -> Vec<(String, f64, ProblemConfig)> {
        let mut out = Vec::new();
        for fam in self.families() {
            for &res in &self.resolutions {
                for &t in &self.scalings {
                    let mut cfg = self.base.clone();
                    cfg.coefficients = fam.clone();
                    cfg.domain.resolution = res;
                    cfg.f = self.base.f.clone().scaled(t);
                    cfg.psi = self.base.psi.clone().scaled(t);
                    cfg.eps.eps0 *= t;
                    out.push((family_label(&fam), t, cfg));
                }
            }
        }
        out
    }
}

fn write_config(dir: Option<&Path>, cfg: &ProblemConfig) -> anyhow::Result<()> {
    if let Some(dir) = dir {
        let cdir = dir.join("configs");
        fs::create_dir_all(&cdir)?;
        fs::write(cdir.join(format!("{}.json", cfg.hash())), serde_json::to_string_pretty(cfg)? + "\n")?;
    }
    Ok(())
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

pub fn sweep_cz_ratio(sweep: &CzSweepConfig, out: Option<&Path>) -> anyhow::Result<CzSweep> {
    sweep.validate()?;
    let configs = sweep.row_configs();
    for (_, _, cfg) in &configs {
        write_config(out, cfg)?;
    }
    let elliptic = sweep.base.kind != ProblemKind::LinearParabolic;
    let names = if elliptic { ("u_w2p", "psi_w2p") } else { ("u_w21p", "psi_w21p") };
    let rows: Vec<CzRow> = configs
        .par_iter()
        .map(|(family, t, cfg)| {
            let mut row = CzRow {
                config_hash: cfg.hash(),
                family: family.clone(),
                resolution: cfg.domain.resolution,
                scaling: *t,
                u_norm: f64::NAN,
                f_norm: f64::NAN,
                psi_norm: f64::NAN,
                ratio: f64::NAN,
                error: None,
            };
            match run(cfg) {
                Ok(o) => {
                    let get = |n: &str| o.record.norm(n).unwrap_or(f64::NAN);
                    row.u_norm = get(names.0);
                    row.f_norm = get("f_lp");
                    row.psi_norm = get(names.1);
                    row.ratio = get("cz_ratio");
                }
                Err(e) => row.error = Some(format!("{e:#}")),
            }
            row
        })
        .collect();
    let summary = summarize(sweep, &rows);
    let result = CzSweep { rows, summary };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("sweep_cz.csv"), cz_csv(&result.rows))?;
        fs::write(dir.join("sweep_cz_summary.json"), serde_json::to_string_pretty(&result.summary)? + "\n")?;
    }
    Ok(result)
}

fn summarize(sweep: &CzSweepConfig, rows: &[CzRow]) -> Vec<CzSummary> {
    sweep
        .families()
        .iter()
        .map(|fam| {
            let label = family_label(fam);
            let mine: Vec<&CzRow> = rows.iter().filter(|r| r.family == label).collect();
            let ok = |r: &&&CzRow| r.error.is_none() && r.ratio.is_finite();
            let by_res = sweep.resolutions.iter().map(|&n| {
                let v: Vec<f64> = mine.iter().filter(ok).filter(|r| r.resolution == n).map(|r| r.ratio).collect();
                spread(&v)
            });
            let by_scale = sweep.scalings.iter().map(|&t| {
                let v: Vec<f64> = mine.iter().filter(ok).filter(|r| r.scaling == t).map(|r| r.ratio).collect();
                spread(&v)
            });
            CzSummary {
                family: label,
                scaling_spread: by_res.fold(1.0, f64::max),
                grid_drift: by_scale.fold(1.0, f64::max),
                max_ratio: mine.iter().filter(ok).map(|r| r.ratio).fold(0.0, f64::max),
                failed_rows: mine.iter().filter(|r| r.error.is_some()).count(),
            }
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn cz_csv(rows: &[CzRow]) -> String {
    let mut out = String::from("config_hash,family,resolution,scaling,u_norm,f_norm,psi_norm,ratio,error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}\n",
            r.config_hash,
            csv_field(&r.family),
            r.resolution,
            r.scaling,
            r.u_norm,
            r.f_norm,
            r.psi_norm,
            r.ratio,
            csv_field(r.error.as_deref().unwrap_or(""))
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderSweepConfig {
    pub base: ProblemConfig,
    pub resolutions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderRow {
    pub config_hash: String,
    pub resolution: usize,
    pub alpha: f64,
    pub holder_du: f64,
    pub f_morrey: f64,
    pub psi_morrey: f64,
    pub ratio: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderSweep {
    pub alpha: f64,
    pub rows: Vec<HolderRow>,
    /// max/min of the seminorm over resolutions.
    pub refinement_spread: f64,
}

impl HolderSweepConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut v = Violations::default();
        let e = &self.base.exponents;
        let n = self.base.dim();
        if let Err(err) = holder_exponent(n, e.p, e.theta) {
            v.push("exponents", format!("{err}; the Sobolev-Morrey embedding requires p + theta > n"));
        }
        v.check(self.base.kind != ProblemKind::LinearParabolic, "base.kind", || {
            "the Holder sweep takes elliptic runs".into()
        });
        v.check(!self.resolutions.is_empty(), "resolutions", || "no grid sizes".into());
        if let Err(e) = self.base.validate() {
            for x in e.violations {
                v.push(&format!("base.{}", x.field), x.reason);
            }
        }
        v.finish()
    }
}

pub fn sweep_holder(sweep: &HolderSweepConfig, out: Option<&Path>) -> anyhow::Result<HolderSweep> {
    sweep.validate()?;
    let e = sweep.base.exponents;
    let alpha = holder_exponent(sweep.base.dim(), e.p, e.theta)?;
    let configs: Vec<ProblemConfig> = sweep
        .resolutions
        .iter()
        .map(|&n| {
            let mut c = sweep.base.clone();
            c.domain.resolution = n;
            c
        })
        .collect();
    for cfg in &configs {
        write_config(out, cfg)?;
    }
    let rows: Vec<HolderRow> = configs
        .par_iter()
        .map(|cfg| {
            let mut row = HolderRow {
                config_hash: cfg.hash(),
                resolution: cfg.domain.resolution,
                alpha,
                holder_du: f64::NAN,
                f_morrey: f64::NAN,
                psi_morrey: f64::NAN,
                ratio: f64::NAN,
                error: None,
            };
            match run(cfg) {
                Ok(o) => {
                    let get = |n: &str| o.record.norm(n).unwrap_or(f64::NAN);
                    row.holder_du = get("holder_du");
                    row.f_morrey = get("f_morrey");
                    row.psi_morrey = get("psi_morrey_w2");
                    row.ratio = row.holder_du / (row.f_morrey + row.psi_morrey);
                }
                Err(err) => row.error = Some(format!("{err:#}")),
            }
            row
        })
        .collect();
    let ok: Vec<f64> = rows.iter().filter(|r| r.holder_du.is_finite()).map(|r| r.holder_du).collect();
    let result = HolderSweep {
        alpha,
        refinement_spread: if ok.is_empty() { f64::NAN } else { spread(&ok) },
        rows,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("sweep_holder.csv"), holder_csv(&result, sweep))?;
    }
    Ok(result)
}

pub fn holder_csv(result: &HolderSweep, sweep: &HolderSweepConfig) -> String {
    let e = sweep.base.exponents;
    let mut out = format!(
        "# n={} p={} theta={} alpha={}\nconfig_hash,resolution,alpha,holder_du,f_morrey,psi_morrey,ratio,error\n",
        sweep.base.dim(),
        e.p,
        e.theta,
        result.alpha
    );
    for r in &result.rows {
        out.push_str(&format!(
            "{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{}\n",
            r.config_hash,
            r.resolution,
            r.alpha,
            r.holder_du,
            r.f_morrey,
            r.psi_morrey,
            r.ratio,
            csv_field(r.error.as_deref().unwrap_or(""))
        ));
    }
    out
}
