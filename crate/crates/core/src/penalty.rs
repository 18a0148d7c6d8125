//! Smoothed Heaviside penalization.
//!
//! `phi_eps(s) = P(s / eps)` where `P` is the normalized primitive of the
//! bump `exp(-1 / (t (1 - t)))` on `(0, 1)`, so `phi_eps = 0` for `s <= 0`,
//! `phi_eps = 1` for `s >= eps`, and `phi_eps(eps / 2) = 1/2`. `P` is
//! tabulated on 4096 intervals and linearly interpolated, which keeps it
//! monotone. `psi_eps(s) = s phi_eps(s)`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::calculus::{apply_linear, apply_operator, OperatorFamily};
use crate::error::{Error, Result};
use crate::field::{MatrixField, ScalarField, SlabField};

const TABLE_INTERVALS: usize = 4096;
const SUBPANELS: usize = 16;

fn bump(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        (-1.0 / (t * (1.0 - t))).exp()
    }
}

fn table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = TABLE_INTERVALS;
        let dt = 1.0 / n as f64;
        let mut cumulative = vec![0.0; n + 1];
        for i in 0..n {
            // composite Simpson on [t_i, t_{i+1}]
            let a = i as f64 * dt;
            let hs = dt / SUBPANELS as f64;
            let mut s = bump(a) + bump(a + dt);
            for k in 1..SUBPANELS {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                s += w * bump(a + k as f64 * hs);
            }
            cumulative[i + 1] = cumulative[i] + s * hs / 3.0;
        }
        let total = cumulative[n];
        // enforce P(1 - t) = 1 - P(t) exactly on the nodes
        let mut p: Vec<f64> = (0..=n)
            .map(|i| 0.5 * (cumulative[i] + (total - cumulative[n - i])) / total)
            .collect();
        p[0] = 0.0;
        p[n / 2] = 0.5;
        p[n] = 1.0;
        p
    })
}

/// Width `eps > 0` of the transition layer of the penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyShape {
    eps: f64,
}

impl PenaltyShape {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::param("eps", format!("{eps} is not a positive number")));
        }
        Ok(PenaltyShape { eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Smoothed Heaviside, values in `[0, 1]`.
    pub fn phi(&self, s: f64) -> f64 {
        if s.is_nan() {
            return f64::NAN;
        }
        if s <= 0.0 {
            return 0.0;
        }
        if s >= self.eps {
            return 1.0;
        }
        let (i, frac) = locate(s / self.eps);
        let p = table();
        p[i] + frac * (p[i + 1] - p[i])
    }

    /// Derivative of the interpolated `phi` (one-sided at table nodes).
    pub fn phi_prime(&self, s: f64) -> f64 {
        if !(s > 0.0 && s < self.eps) {
            return 0.0;
        }
        let (i, _) = locate(s / self.eps);
        let p = table();
        (p[i + 1] - p[i]) * TABLE_INTERVALS as f64 / self.eps
    }

    pub fn psi(&self, s: f64) -> f64 {
        s * self.phi(s)
    }
}

/// Geometric schedule `eps_k = eps0 * factor^k`, `k = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsSchedule {
    pub eps0: f64,
    pub factor: f64,
    pub count: usize,
}

impl EpsSchedule {
    pub fn new(eps0: f64, factor: f64, count: usize) -> Result<Self> {
        let s = EpsSchedule { eps0, factor, count };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps0 > 0.0) || !self.eps0.is_finite() {
            return Err(Error::param("eps0", format!("{} is not positive", self.eps0)));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::param("factor", format!("{} is not in (0, 1)", self.factor)));
        }
        if self.count == 0 {
            return Err(Error::param("count", "schedule is empty"));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.eps0 * self.factor.powi(k as i32)).collect()
    }

    pub fn last(&self) -> f64 {
        self.eps0 * self.factor.powi(self.count as i32 - 1)
    }
}

/// Checks that an explicit schedule is nonempty, positive and strictly decreasing.
pub fn validate_schedule(eps: &[f64]) -> Result<()> {
    if eps.is_empty() {
        return Err(Error::param("eps_schedule", "schedule is empty"));
    }
    if eps.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::param("eps_schedule", "entries must be positive"));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param("eps_schedule", "schedule must be strictly decreasing"));
    }
    Ok(())
}

fn locate(t: f64) -> (usize, f64) {
    let pos = t * TABLE_INTERVALS as f64;
    let i = (pos.floor() as usize).min(TABLE_INTERVALS - 1);
    (i, pos - i as f64)
}

/// `g = f - F(x, D^2 psi)` at interior nodes; other nodes get 0.
pub fn assemble_g_elliptic(
    family: &OperatorFamily,
    f: &ScalarField,
    psi: &ScalarField,
) -> Result<ScalarField> {
    f.check_grid(psi)?;
    let lpsi = apply_operator(family, psi)?;
    let grid = f.grid();
    let mut g = vec![0.0; grid.active_len()];
    for &s in grid.interior_slots() {
        g[s] = f.values()[s] - lpsi.values()[s];
    }
    ScalarField::new(grid.clone(), g)
}

/// `g = -f + psi_t - a_ij D_ij psi` at interior nodes of every time level.
///
/// `coeffs` holds either one time-independent field or one field per level.
pub fn assemble_g_parabolic(
    coeffs: &[MatrixField],
    f: &SlabField,
    psi: &SlabField,
    psi_t: &SlabField,
) -> Result<SlabField> {
    f.check_grid(psi)?;
    f.check_grid(psi_t)?;
    let levels = f.slices().len();
    if coeffs.len() != 1 && coeffs.len() != levels {
        return Err(Error::param(
            "coeffs",
            format!("expected 1 or {levels} coefficient fields, got {}", coeffs.len()),
        ));
    }
    let grid = f.grid().base();
    let mut slices = Vec::with_capacity(levels);
    for m in 0..levels {
        let a = &coeffs[if coeffs.len() == 1 { 0 } else { m }];
        let lpsi = apply_linear(a, psi.slice(m))?;
        let mut g = vec![0.0; grid.active_len()];
        for &s in grid.interior_slots() {
            g[s] = -f.slice(m).values()[s] + psi_t.slice(m).values()[s] - lpsi.values()[s];
        }
        slices.push(ScalarField::new(grid.clone(), g)?);
    }
    SlabField::new(f.grid().clone(), slices)
}

/// `g+ phi(u - psi) + f - g+` nodewise.
pub fn penalized_rhs_elliptic(
    g: &ScalarField,
    f: &ScalarField,
    u: &ScalarField,
    psi: &ScalarField,
    shape: &PenaltyShape,
) -> Result<ScalarField> {
    for other in [f, u, psi] {
        g.check_grid(other)?;
    }
    let values = (0..g.len())
        .map(|s| {
            let gp = g.values()[s].max(0.0);
            gp * shape.phi(u.values()[s] - psi.values()[s]) + f.values()[s] - gp
        })
        .collect();
    ScalarField::new(g.grid().clone(), values)
}

/// `psi_eps(g) (1 - phi(u - psi)) + f` nodewise, for one time level.
pub fn penalized_rhs_parabolic(
    g: &ScalarField,
    f: &ScalarField,
    u: &ScalarField,
    psi: &ScalarField,
    shape: &PenaltyShape,
) -> Result<ScalarField> {
    for other in [f, u, psi] {
        g.check_grid(other)?;
    }
    let values = (0..g.len())
        .map(|s| {
            let pg = shape.psi(g.values()[s]);
            pg * (1.0 - shape.phi(u.values()[s] - psi.values()[s])) + f.values()[s]
        })
        .collect();
    ScalarField::new(g.grid().clone(), values)
}
