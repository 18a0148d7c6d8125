//! Norm tables computed from a stored or freshly solved field.

use std::sync::Arc;

use obstacle_core::calculus::{hessian_stencils, OperatorFamily};
use obstacle_core::field::{MatrixField, ScalarField, SlabField};
use obstacle_core::geometry::{Grid, SpaceTimeGrid};
use obstacle_core::norms::{
    a1_ratio, beta_oscillation_modulus, bmo_vanishing_modulus, bmo_vanishing_modulus_parabolic, gradient,
    holder_exponent, holder_seminorm, maximal_char_ball, morrey_norm, muckenhoupt_constant, weighted_lp_norm,
    weighted_w21p_norm, weighted_w2p_norm, BallSampler, ProbeSet, WeightField,
};
use obstacle_core::Result;
use serde::{Deserialize, Serialize};

use crate::config::{ProblemConfig, WeightSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub norm: String,
    pub params: String,
    pub sampler: String,
    pub value: f64,
}

pub const NORMS_HEADER: &str = "config_hash,norm,params,sampler,value";

/// CSV rows in a fixed order with round-trip float formatting.
pub fn norms_csv(hash: &str, rows: &[NormRow]) -> String {
    let mut out = String::from(NORMS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{hash},{},{},{},{:.17e}\n", r.norm, quote(&r.params), quote(&r.sampler), r.value));
    }
    out
}

fn quote(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn weight_field(cfg: &ProblemConfig, grid: &Arc<Grid>) -> Result<WeightField> {
    match cfg.weight {
        WeightSpec::Constant { value } => WeightField::constant(grid, value, cfg.exponents.s),
        WeightSpec::Power { gamma } => WeightField::power(grid, gamma, cfg.exponents.s),
    }
}

pub fn sampler(cfg: &ProblemConfig, grid: &Arc<Grid>) -> Result<BallSampler> {
    match cfg.sampler.levels {
        Some(levels) => BallSampler::dyadic(grid, levels, cfg.sampler.stride),
        None => BallSampler::dyadic_covering(grid, cfg.sampler.stride),
    }
}

fn weight_label(cfg: &ProblemConfig) -> String {
    match cfg.weight {
        WeightSpec::Constant { value } => format!("w=const({value})"),
        WeightSpec::Power { gamma } => format!("w=|x|^{gamma}"),
    }
}

/// `(sum_{|alpha| <= 2} |D^alpha v|^p)^(1/p)` pointwise.
pub fn w2_density(v: &ScalarField, p: f64) -> ScalarField {
    let grid = v.grid();
    let grad = gradient(v);
    let hess = hessian_stencils(v);
    let values = (0..grid.active_len())
        .map(|s| {
            let m = hess.at(s);
            let mut total = v.values()[s].abs().powf(p);
            for g in &grad {
                total += g.values()[s].abs().powf(p);
            }
            total += m.a11.abs().powf(p);
            if grid.dim() == 2 {
                total += m.a12.abs().powf(p) + m.a22.abs().powf(p);
            }
            total.powf(1.0 / p)
        })
        .collect();
    ScalarField::new(grid.clone(), values).expect("same grid")
}

/// Largest Holder-`alpha` seminorm over the gradient components.
pub fn gradient_holder(u: &ScalarField, alpha: f64) -> Result<f64> {
    let mut best: f64 = 0.0;
    for g in gradient(u) {
        best = best.max(holder_seminorm(&g, alpha)?);
    }
    Ok(best)
}

fn row(norm: &str, params: String, sampler: &str, value: f64) -> NormRow {
    NormRow {
        norm: norm.into(),
        params,
        sampler: sampler.into(),
        value,
    }
}

/// Norm table of an elliptic run. Row order is fixed.
pub fn elliptic_norms(
    cfg: &ProblemConfig,
    family: &OperatorFamily,
    u: &ScalarField,
    f: &ScalarField,
    psi: &ScalarField,
) -> Result<Vec<NormRow>> {
    let grid = u.grid();
    let e = &cfg.exponents;
    let w = weight_field(cfg, grid)?;
    let balls = sampler(cfg, grid)?;
    let wp = format!("p={},s={},{}", e.p, e.s, weight_label(cfg));
    let mut rows = Vec::new();
    let u_norm = weighted_w2p_norm(u, &w, e.p)?;
    let f_norm = weighted_lp_norm(f, &w, e.p)?;
    let psi_norm = weighted_w2p_norm(psi, &w, e.p)?;
    rows.push(row("u_w2p", wp.clone(), "-", u_norm));
    rows.push(row("f_lp", wp.clone(), "-", f_norm));
    rows.push(row("psi_w2p", wp.clone(), "-", psi_norm));
    rows.push(row("cz_ratio", wp, "-", u_norm / (f_norm + psi_norm)));
    rows.push(row("muckenhoupt", format!("s={},{}", e.s, weight_label(cfg)), balls.id(), muckenhoupt_constant(&w, e.s, &balls)?));
    let mp = format!("p={},theta={}", e.p, e.theta);
    let u_morrey = morrey_norm(&w2_density(u, e.p), e.p, e.theta, &balls)?;
    let f_morrey = morrey_norm(f, e.p, e.theta, &balls)?;
    let psi_morrey = morrey_norm(&w2_density(psi, e.p), e.p, e.theta, &balls)?;
    rows.push(row("u_morrey_w2", mp.clone(), balls.id(), u_morrey));
    rows.push(row("f_morrey", mp.clone(), balls.id(), f_morrey));
    rows.push(row("psi_morrey_w2", mp.clone(), balls.id(), psi_morrey));
    rows.push(row("morrey_ratio", mp, balls.id(), u_morrey / (f_morrey + psi_morrey)));
    let r0 = cfg.sampler.r_max;
    let center = [0.0, 0.0];
    let m = maximal_char_ball(grid, center, r0)?.map(|v| v.powf(e.sigma));
    rows.push(row("maximal_a1", format!("sigma={},r={r0}", e.sigma), balls.id(), a1_ratio(&m, &balls)?));
    let bmo = family
        .members()
        .iter()
        .map(|a| bmo_vanishing_modulus(a, r0, &balls))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    rows.push(row("bmo_modulus", format!("R={r0}"), balls.id(), bmo));
    let probes = ProbeSet::new(grid.dim(), cfg.sampler.probes, cfg.sampler.seed);
    let beta = beta_oscillation_modulus(family, r0, &balls, &probes)?;
    let probe_id = format!("probes(count={},seed={})", cfg.sampler.probes, cfg.sampler.seed);
    rows.push(row("beta_modulus", format!("R0={r0},{probe_id}"), balls.id(), beta));
    if let Ok(alpha) = holder_exponent(grid.dim(), e.p, e.theta) {
        rows.push(row("holder_du", format!("alpha={alpha}"), "pairs", gradient_holder(u, alpha)?));
    }
    Ok(rows)
}

fn slab_lp(v: &SlabField, w: &WeightField, p: f64) -> Result<f64> {
    let dt = v.grid().dt();
    let mut total = 0.0;
    for s in v.slices() {
        total += dt * weighted_lp_norm(s, w, p)?.powf(p);
    }
    Ok(total.powf(1.0 / p))
}

/// Norm table of a parabolic run.
pub fn parabolic_norms(
    cfg: &ProblemConfig,
    st: &Arc<SpaceTimeGrid>,
    coeffs: &[MatrixField],
    u: &SlabField,
    f: &SlabField,
    psi: &SlabField,
) -> Result<Vec<NormRow>> {
    let grid = st.base();
    let e = &cfg.exponents;
    let w = weight_field(cfg, grid)?;
    let balls = sampler(cfg, grid)?;
    let wp = format!("p={},s={},{}", e.p, e.s, weight_label(cfg));
    let u_norm = weighted_w21p_norm(u, &w, e.p)?;
    let f_norm = slab_lp(f, &w, e.p)?;
    let psi_norm = weighted_w21p_norm(psi, &w, e.p)?;
    let r0 = cfg.sampler.r_max;
    Ok(vec![
        row("u_w21p", wp.clone(), "-", u_norm),
        row("f_lp", wp.clone(), "-", f_norm),
        row("psi_w21p", wp.clone(), "-", psi_norm),
        row("cz_ratio", wp, "-", u_norm / (f_norm + psi_norm)),
        row("muckenhoupt", format!("s={},{}", e.s, weight_label(cfg)), balls.id(), muckenhoupt_constant(&w, e.s, &balls)?),
        row(
            "bmo_modulus_parabolic",
            format!("R={r0}"),
            balls.id(),
            bmo_vanishing_modulus_parabolic(coeffs, st, r0, &balls)?,
        ),
    ])
}
