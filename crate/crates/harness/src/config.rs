//! JSON problem configs. Unknown keys are rejected at parse time; value
//! checks run in [`ProblemConfig::validate`], which reports every violated
//! field at once.

use std::fmt;
use std::path::Path;

use obstacle_core::calculus::CoefficientPreset;
use obstacle_core::elliptic::{FixedPointMethod, FixedPointOptions, Pipeline};
use obstacle_core::field::FieldExpr;
use obstacle_core::geometry::{build_grid, DomainPreset};
use obstacle_core::norms::WeightField;
use obstacle_core::penalty::EpsSchedule;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    LinearElliptic,
    BellmanElliptic,
    LinearParabolic,
}

impl ProblemKind {
    pub fn label(self) -> &'static str {
        match self {
            ProblemKind::LinearElliptic => "linear-elliptic",
            ProblemKind::BellmanElliptic => "bellman-elliptic",
            ProblemKind::LinearParabolic => "linear-parabolic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub preset: DomainPreset,
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightSpec {
    Constant { value: f64 },
    Power { gamma: f64 },
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Constant { value: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exponents {
    pub p: f64,
    pub theta: f64,
    pub s: f64,
    pub sigma: f64,
}

impl Default for Exponents {
    fn default() -> Self {
        Exponents {
            p: 4.0,
            theta: 1.0,
            s: 2.0,
            sigma: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Multiplies `1 + |f| + |g+|` to give the fixed-point tolerance.
    pub tol_scale: f64,
    pub max_iters: usize,
    pub method: FixedPointMethod,
}

impl Default for Tolerances {
    fn default() -> Self {
        let d = FixedPointOptions::default();
        Tolerances {
            tol_scale: d.tol_scale,
            max_iters: d.max_iters,
            method: d.method,
        }
    }
}

impl Tolerances {
    pub fn options(&self) -> FixedPointOptions {
        FixedPointOptions {
            method: self.method,
            max_iters: self.max_iters,
            tol_scale: self.tol_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSpec {
    /// Ball centers sit on every `stride`-th lattice line.
    pub stride: usize,
    /// Dyadic radius levels; `None` covers the whole domain.
    pub levels: Option<usize>,
    pub seed: u64,
    /// Random probe matrices for the oscillation modulus.
    pub probes: usize,
    /// Radius bound for the vanishing-oscillation moduli.
    pub r_max: f64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec {
            stride: 4,
            levels: None,
            seed: 0,
            probes: 8,
            r_max: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub t_final: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub domain: DomainSpec,
    pub coefficients: Vec<CoefficientPreset>,
    pub f: FieldExpr,
    pub psi: FieldExpr,
    #[serde(default)]
    pub weight: WeightSpec,
    #[serde(default)]
    pub exponents: Exponents,
    pub eps: EpsSchedule,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub pipeline: Pipeline,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSpec>,
}

/// One violated field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config:")?;
        for v in &self.violations {
            write!(f, "\n  {}: {}", v.field, v.reason)?;
        }
        Ok(())
    }
}

impl ValidationError {
    pub fn names(&self, field: &str) -> bool {
        self.violations.iter().any(|v| v.field == field)
    }
}

#[derive(Default)]
pub(crate) struct Violations(Vec<Violation>);

impl Violations {
    pub(crate) fn push(&mut self, field: &str, reason: impl Into<String>) {
        self.0.push(Violation {
            field: field.into(),
            reason: reason.into(),
        });
    }

    pub(crate) fn check(&mut self, ok: bool, field: &str, reason: impl FnOnce() -> String) {
        if !ok {
            self.push(field, reason());
        }
    }

    pub(crate) fn finish(self) -> Result<(), ValidationError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { violations: self.0 })
        }
    }
}

fn finite_positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()))
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_json().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn dim(&self) -> usize {
        self.domain.preset.dim()
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut v = Violations::default();
        let n = self.dim() as f64;
        let e = &self.exponents;
        v.check(self.domain.resolution >= 2, "domain.resolution", || {
            format!("{} is below 2", self.domain.resolution)
        });
        let grid = if self.domain.resolution >= 2 {
            build_grid(self.domain.preset, self.domain.resolution).ok()
        } else {
            None
        };
        match self.kind {
            ProblemKind::BellmanElliptic => {
                v.check(!self.coefficients.is_empty(), "coefficients", || "the family is empty".into());
                v.check(e.p > 1.0, "exponents.p", || format!("{} must exceed 1", e.p));
            }
            _ => {
                v.check(self.coefficients.len() == 1, "coefficients", || {
                    format!("a linear run needs exactly one preset, got {}", self.coefficients.len())
                });
                v.check(e.p > 2.0 && e.p.is_finite(), "exponents.p", || {
                    format!("{} is outside (2, inf) required for linear runs", e.p)
                });
            }
        }
        v.check(e.theta > 0.0 && e.theta < n, "exponents.theta", || {
            format!("{} is outside (0, {n})", e.theta)
        });
        v.check(e.s > 1.0 && e.s.is_finite(), "exponents.s", || format!("{} must exceed 1", e.s));
        v.check(e.sigma > 0.0 && e.sigma < 1.0, "exponents.sigma", || {
            format!("{} is outside (0, 1)", e.sigma)
        });
        if let Err(err) = self.eps.validate() {
            v.push("eps", err.to_string());
        }
        let t = &self.tolerances;
        v.check(finite_positive(t.tol_scale), "tolerances.tol_scale", || {
            format!("{} is not positive", t.tol_scale)
        });
        v.check(t.max_iters >= 1, "tolerances.max_iters", || "must be at least 1".into());
        if let FixedPointMethod::Picard { omega } = t.method {
            v.check(omega > 0.0 && omega <= 1.0, "tolerances.method.omega", || {
                format!("{omega} is outside (0, 1]")
            });
        }
        let s = &self.sampler;
        v.check(s.stride >= 1, "sampler.stride", || "must be at least 1".into());
        v.check(s.levels != Some(0), "sampler.levels", || "must be at least 1".into());
        v.check(finite_positive(s.r_max), "sampler.r_max", || format!("{} is not positive", s.r_max));
        match (self.kind, &self.time) {
            (ProblemKind::LinearParabolic, None) => v.push("time", "a parabolic run needs t_final and steps"),
            (ProblemKind::LinearParabolic, Some(ts)) => {
                v.check(finite_positive(ts.t_final), "time.t_final", || format!("{} is not positive", ts.t_final));
                v.check(ts.steps >= 1, "time.steps", || "must be at least 1".into());
            }
            (_, Some(_)) => v.push("time", "only parabolic runs take a time grid"),
            (_, None) => {}
        }
        if let Some(grid) = &grid {
            let h = grid.h();
            if let Pipeline::Mollified { radius } = self.pipeline {
                v.check(radius >= h, "pipeline.radius", || format!("{radius} is below the mesh width {h}"));
            }
            v.check(s.r_max >= h, "sampler.r_max", || format!("{} is below the mesh width {h}", s.r_max));
            let weight = match self.weight {
                WeightSpec::Constant { value } => WeightField::constant(grid, value, e.s),
                WeightSpec::Power { gamma } => WeightField::power(grid, gamma, e.s),
            };
            if let Err(err) = weight {
                v.push("weight", err.to_string());
            }
        }
        v.finish()
    }
}
