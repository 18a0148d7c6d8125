//! Weighted norms, Muckenhoupt constants, maximal functions, Morrey norms,
//! oscillation moduli, Holder seminorms and complementarity residuals.
//!
//! Every supremum over balls or matrices is a maximum over an explicit
//! sampler, and samplers carry an id so reports can name them.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::{hessian_stencils, random_symmetric, OperatorFamily};
use crate::error::{Error, Result};
use crate::field::{MatrixField, ScalarField, SlabField, SymMat};
use crate::geometry::{Grid, SpaceTimeGrid};

/// Slack for closed-ball membership tests, so nodes on a sphere count.
const BALL_SLACK: f64 = 1e-12;

/// Ball centers (active slots) and increasing radii.
#[derive(Debug, Clone, PartialEq)]
pub struct BallSampler {
    grid: Arc<Grid>,
    centers: Vec<usize>,
    radii: Vec<f64>,
    id: String,
}

impl BallSampler {
    pub fn new(grid: &Arc<Grid>, centers: Vec<usize>, radii: Vec<f64>, id: impl Into<String>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::param("centers", "sampler has no centers"));
        }
        if let Some(&c) = centers.iter().find(|&&c| c >= grid.active_len()) {
            return Err(Error::param("centers", format!("slot {c} is not an active node")));
        }
        if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::param("radii", "radii must be positive"));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("radii", "radii must be increasing"));
        }
        Ok(BallSampler {
            grid: grid.clone(),
            centers,
            radii,
            id: id.into(),
        })
    }

    /// Radii `h 2^j` for `j = 0..levels` and centers on every `stride`-th
    /// lattice line.
    pub fn dyadic(grid: &Arc<Grid>, levels: usize, stride: usize) -> Result<Self> {
        if levels == 0 || stride == 0 {
            return Err(Error::param("levels", "levels and stride must be positive"));
        }
        let radii = (0..levels).map(|j| grid.h() * 2f64.powi(j as i32)).collect();
        let centers = (0..grid.active_len())
            .filter(|&s| {
                let (i, j) = grid.lattice_ij(s);
                i % stride == 0 && j % stride == 0
            })
            .collect();
        let id = format!("dyadic(levels={levels},stride={stride},cells={})", grid.cells());
        BallSampler::new(grid, centers, radii, id)
    }

    /// Dyadic radii up to the first one covering the bounding box.
    pub fn dyadic_covering(grid: &Arc<Grid>, stride: usize) -> Result<Self> {
        let (lo, hi) = grid.bbox();
        let diam = (hi - lo) * (grid.dim() as f64).sqrt();
        let mut levels = 1;
        while grid.h() * 2f64.powi(levels as i32 - 1) < diam {
            levels += 1;
        }
        BallSampler::dyadic(grid, levels, stride)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Same centers, only the radii not exceeding `r_max`.
    pub fn truncated(&self, r_max: f64) -> Option<BallSampler> {
        let radii: Vec<f64> = self.radii.iter().copied().filter(|r| *r <= r_max * (1.0 + BALL_SLACK)).collect();
        if radii.is_empty() {
            return None;
        }
        Some(BallSampler {
            grid: self.grid.clone(),
            centers: self.centers.clone(),
            radii,
            id: format!("{}|r<={r_max}", self.id),
        })
    }

    fn check(&self, grid: &Arc<Grid>) -> Result<()> {
        if Grid::same(&self.grid, grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Active slots in the closed ball `B_r(x)`.
pub fn ball_slots(grid: &Grid, x: [f64; 2], r: f64) -> Vec<usize> {
    let (lo, _) = grid.bbox();
    let h = grid.h();
    let last = grid.side() as i64 - 1;
    let range = |c: f64| {
        let a = (((c - r - lo) / h).floor() as i64).max(0);
        let b = (((c + r - lo) / h).ceil() as i64).min(last);
        a..=b
    };
    let r2 = r * r * (1.0 + BALL_SLACK);
    let js = if grid.dim() == 1 { 0..=0 } else { range(x[1]) };
    let mut out = Vec::new();
    for j in js {
        for i in range(x[0]) {
            if let Some(s) = grid.slot_at(i as usize, j as usize) {
                let y = grid.coords(s);
                let d2 = (y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2);
                if d2 <= r2 {
                    out.push(s);
                }
            }
        }
    }
    out
}

/// Positive weight `w` with a declared Muckenhoupt class parameter `s`.
#[derive(Debug, Clone)]
pub struct WeightField {
    w: ScalarField,
    s: f64,
}

impl WeightField {
    pub fn new(w: ScalarField, s: f64) -> Result<Self> {
        if let Some((node, &value)) = w.values().iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::NonFinite {
                node,
                coords: w.grid().point(node),
                value,
            });
        }
        if !(s > 1.0) {
            return Err(Error::param("s", format!("{s} must exceed 1")));
        }
        Ok(WeightField { w, s })
    }

    pub fn constant(grid: &Arc<Grid>, c: f64, s: f64) -> Result<Self> {
        WeightField::new(ScalarField::constant(grid, c), s)
    }

    /// `|x|^gamma`; fails if a node sits at the origin and `gamma < 0`.
    pub fn power(grid: &Arc<Grid>, gamma: f64, s: f64) -> Result<Self> {
        let w = ScalarField::from_fn(grid, |x| x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(gamma));
        WeightField::new(w, s)
    }

    pub fn values(&self) -> &ScalarField {
        &self.w
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.w.grid()
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::param("p", format!("{p} must exceed 1")));
    }
    Ok(())
}

fn weighted_sum(g: &ScalarField, w: &WeightField, p: f64) -> Result<f64> {
    if !Grid::same(g.grid(), w.grid()) {
        return Err(Error::GridMismatch);
    }
    let vol = g.grid().cell_volume();
    Ok(g.values()
        .iter()
        .zip(w.values().values())
        .map(|(v, wv)| v.abs().powf(p) * wv)
        .sum::<f64>()
        * vol)
}

/// `(sum |g|^p w h^n)^(1/p)` over active nodes.
pub fn weighted_lp_norm(g: &ScalarField, w: &WeightField, p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(weighted_sum(g, w, p)?.powf(1.0 / p))
}

/// Central differences, one-sided next to missing neighbours.
pub fn gradient(u: &ScalarField) -> Vec<ScalarField> {
    let grid = u.grid();
    let h = grid.h();
    let v = u.values();
    (0..grid.dim())
        .map(|axis| {
            let values = (0..grid.active_len())
                .map(|s| {
                    let (i, j) = grid.lattice_ij(s);
                    let step = |d: i64| -> Option<usize> {
                        let (ii, jj) = if axis == 0 { (i as i64 + d, j as i64) } else { (i as i64, j as i64 + d) };
                        if ii < 0 || jj < 0 {
                            None
                        } else {
                            grid.slot_at(ii as usize, jj as usize)
                        }
                    };
                    match (step(-1), step(1)) {
                        (Some(a), Some(b)) => (v[b] - v[a]) / (2.0 * h),
                        (None, Some(b)) => (v[b] - v[s]) / h,
                        (Some(a), None) => (v[s] - v[a]) / h,
                        (None, None) => 0.0,
                    }
                })
                .collect();
            ScalarField::new(grid.clone(), values).expect("same grid")
        })
        .collect()
}

/// Scalar fields for every derivative `D^alpha u`, `|alpha| = 2`.
fn second_derivatives(u: &ScalarField) -> Vec<ScalarField> {
    let grid = u.grid();
    let hess = hessian_stencils(u);
    let pick = |f: fn(&SymMat) -> f64| {
        ScalarField::new(grid.clone(), hess.values().iter().map(f).collect()).expect("same grid")
    };
    if grid.dim() == 1 {
        vec![pick(|m| m.a11)]
    } else {
        vec![pick(|m| m.a11), pick(|m| m.a12), pick(|m| m.a22)]
    }
}

fn w2p_sum(u: &ScalarField, w: &WeightField, p: f64) -> Result<f64> {
    let mut total = weighted_sum(u, w, p)?;
    for d in gradient(u).iter().chain(second_derivatives(u).iter()) {
        total += weighted_sum(d, w, p)?;
    }
    Ok(total)
}

/// `(sum_{|alpha| <= 2} |D^alpha u|^p_{L^p_w})^(1/p)`.
pub fn weighted_w2p_norm(u: &ScalarField, w: &WeightField, p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(w2p_sum(u, w, p)?.powf(1.0 / p))
}

/// Space-time analogue with the extra `u_t` term; every level carries
/// weight `dt`.
pub fn weighted_w21p_norm(u: &SlabField, w: &WeightField, p: f64) -> Result<f64> {
    check_p(p)?;
    let dt = u.grid().dt();
    let ut = u.backward_time_difference();
    let mut total = 0.0;
    for m in 0..u.slices().len() {
        total += dt * (w2p_sum(u.slice(m), w, p)? + weighted_sum(ut.slice(m), w, p)?);
    }
    Ok(total.powf(1.0 / p))
}

/// `(avg_B w)(avg_B w^(-1/(s-1)))^(s-1)` for every sampled ball, in sampler
/// order (centers outer, radii inner).
pub fn muckenhoupt_products(w: &WeightField, s: f64, sampler: &BallSampler) -> Result<Vec<f64>> {
    if !(s > 1.0) {
        return Err(Error::param("s", format!("{s} must exceed 1")));
    }
    sampler.check(w.grid())?;
    let grid = w.grid();
    let q = -1.0 / (s - 1.0);
    let vals = w.values().values();
    let dual: Vec<f64> = vals.iter().map(|v| v.powf(q)).collect();
    let mut out = Vec::with_capacity(sampler.centers().len() * sampler.radii().len());
    if grid.dim() == 1 {
        // prefix sums over the lattice order, which is the slot order in 1D
        let prefix = |v: &[f64]| {
            let mut acc = vec![0.0; v.len() + 1];
            for (k, x) in v.iter().enumerate() {
                acc[k + 1] = acc[k] + x;
            }
            acc
        };
        let (pw, pd) = (prefix(vals), prefix(&dual));
        let h = grid.h();
        let n = vals.len() as i64;
        for &c in sampler.centers() {
            let (ic, _) = grid.lattice_ij(c);
            for &r in sampler.radii() {
                let k = ((r / h) * (1.0 + BALL_SLACK)).floor() as i64;
                let a = (ic as i64 - k).max(0) as usize;
                let b = (ic as i64 + k).min(n - 1) as usize + 1;
                let cnt = (b - a) as f64;
                let mw = (pw[b] - pw[a]) / cnt;
                let md = (pd[b] - pd[a]) / cnt;
                out.push(mw * md.powf(s - 1.0));
            }
        }
    } else {
        for &c in sampler.centers() {
            let x = grid.coords(c);
            for &r in sampler.radii() {
                let ball = ball_slots(grid, x, r);
                let cnt = ball.len() as f64;
                let mw = ball.iter().map(|&k| vals[k]).sum::<f64>() / cnt;
                let md = ball.iter().map(|&k| dual[k]).sum::<f64>() / cnt;
                out.push(mw * md.powf(s - 1.0));
            }
        }
    }
    Ok(out)
}

/// Sampled `[w]_s`.
pub fn muckenhoupt_constant(w: &WeightField, s: f64, sampler: &BallSampler) -> Result<f64> {
    let products = muckenhoupt_products(w, s, sampler)?;
    Ok(products.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Default radii for the maximal function: `h 2^(j/4)` up to twice the
/// bounding box diameter.
pub fn maximal_radii(grid: &Grid) -> Vec<f64> {
    let (lo, hi) = grid.bbox();
    let top = 2.0 * (hi - lo) * (grid.dim() as f64).sqrt();
    let mut radii = Vec::new();
    let mut j = 0;
    loop {
        let r = grid.h() * 2f64.powf(j as f64 / 4.0);
        if r > top {
            break;
        }
        radii.push(r);
        j += 1;
    }
    radii
}

/// Lattice points of `h Z^n` within distance `r` of the origin.
fn lattice_ball_count(h: f64, dim: usize, r: f64) -> usize {
    let k = (r / h).floor() as i64;
    let r2 = (r / h).powi(2) * (1.0 + BALL_SLACK);
    if dim == 1 {
        return (2 * k + 1) as usize;
    }
    let mut count = 0;
    for j in -k..=k {
        for i in -k..=k {
            if (i * i + j * j) as f64 <= r2 {
                count += 1;
            }
        }
    }
    count
}

/// `M chi_{B_r(center)}` on the lattice with the default radii.
pub fn maximal_char_ball(grid: &Arc<Grid>, center: [f64; 2], r: f64) -> Result<ScalarField> {
    maximal_char_ball_with(grid, center, r, &maximal_radii(grid))
}

/// `sup_rho #(B_rho(x) cap B_r(c)) / #B_rho(x)` counted on the infinite
/// lattice through the grid nodes, at every active node `x`.
pub fn maximal_char_ball_with(grid: &Arc<Grid>, center: [f64; 2], r: f64, radii: &[f64]) -> Result<ScalarField> {
    if !(r > 0.0) {
        return Err(Error::param("r", format!("{r} must be positive")));
    }
    let h = grid.h();
    let dim = grid.dim();
    let (lo, _) = grid.bbox();
    // lattice points of the target ball, unbounded by the domain
    let k = (r / h).ceil() as i64 + 1;
    let base = |c: f64| ((c - lo) / h).round() as i64;
    let (bi, bj) = (base(center[0]), if dim == 1 { 0 } else { base(center[1]) });
    let mut target = Vec::new();
    let jr = if dim == 1 { 0..=0 } else { bj - k..=bj + k };
    for j in jr {
        for i in bi - k..=bi + k {
            let p = [lo + i as f64 * h, if dim == 1 { 0.0 } else { lo + j as f64 * h }];
            let d2 = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2);
            if d2 <= r * r * (1.0 + BALL_SLACK) {
                target.push(p);
            }
        }
    }
    let counts: Vec<f64> = radii.iter().map(|&rho| lattice_ball_count(h, dim, rho) as f64).collect();
    let values = (0..grid.active_len())
        .map(|s| {
            let x = grid.coords(s);
            let mut d2: Vec<f64> = target
                .iter()
                .map(|p| (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2))
                .collect();
            d2.sort_by(f64::total_cmp);
            let mut best: f64 = 0.0;
            let mut hit = 0;
            for (rho, cnt) in radii.iter().zip(&counts) {
                let lim = rho * rho * (1.0 + BALL_SLACK);
                while hit < d2.len() && d2[hit] <= lim {
                    hit += 1;
                }
                best = best.max(hit as f64 / cnt);
            }
            best
        })
        .collect();
    ScalarField::new(grid.clone(), values)
}

/// `sup_B (avg_B v) / (min_B v)` over sampled balls, for positive `v`.
pub fn a1_ratio(v: &ScalarField, sampler: &BallSampler) -> Result<f64> {
    sampler.check(v.grid())?;
    let grid = v.grid();
    let mut best: f64 = 0.0;
    for &c in sampler.centers() {
        let x = grid.coords(c);
        for &r in sampler.radii() {
            let ball = ball_slots(grid, x, r);
            let vals = ball.iter().map(|&k| v.values()[k]);
            let min = vals.clone().fold(f64::INFINITY, f64::min);
            let avg = vals.sum::<f64>() / ball.len() as f64;
            if min > 0.0 {
                best = best.max(avg / min);
            } else if avg > 0.0 {
                best = f64::INFINITY;
            }
        }
    }
    Ok(best)
}

/// `sup (r^-theta int_{B_r(y)} |g|^p)^(1/p)` over the sampler.
pub fn morrey_norm(g: &ScalarField, p: f64, theta: f64, sampler: &BallSampler) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::param("p", format!("{p} must be at least 1")));
    }
    let n = g.grid().dim() as f64;
    if !(theta > 0.0 && theta < n) {
        return Err(Error::param("theta", format!("{theta} is not in (0, {n})")));
    }
    sampler.check(g.grid())?;
    let grid = g.grid();
    let vol = grid.cell_volume();
    let pw: Vec<f64> = g.values().iter().map(|v| v.abs().powf(p)).collect();
    let mut best: f64 = 0.0;
    for &c in sampler.centers() {
        let x = grid.coords(c);
        for &r in sampler.radii() {
            let mass: f64 = ball_slots(grid, x, r).iter().map(|&k| pw[k]).sum::<f64>() * vol;
            best = best.max(mass / r.powf(theta));
        }
    }
    Ok(best.powf(1.0 / p))
}

fn rms_deviation(values: &[SymMat], dim: usize) -> f64 {
    let n = values.len() as f64;
    let mean = values
        .iter()
        .fold(SymMat::new(0.0, 0.0, 0.0), |acc, m| acc.add(*m))
        .scale(1.0 / n);
    (values.iter().map(|m| m.sub(mean).frobenius_sq(dim)).sum::<f64>() / n).sqrt()
}

/// `sup (avg_B |A - A_B|^2)^(1/2)` over sampled balls of radius at most `r_max`.
pub fn bmo_vanishing_modulus(a: &MatrixField, r_max: f64, sampler: &BallSampler) -> Result<f64> {
    let grid = a.grid();
    if !(r_max >= grid.h() * (1.0 - BALL_SLACK)) {
        return Err(Error::param("R", format!("{r_max} is below the mesh width {}", grid.h())));
    }
    sampler.check(grid)?;
    let mut best: f64 = 0.0;
    for &c in sampler.centers() {
        let x = grid.coords(c);
        for &r in sampler.radii().iter().filter(|r| **r <= r_max * (1.0 + BALL_SLACK)) {
            let vals: Vec<SymMat> = ball_slots(grid, x, r).iter().map(|&k| a.at(k)).collect();
            best = best.max(rms_deviation(&vals, grid.dim()));
        }
    }
    Ok(best)
}

/// Parabolic version over cylinders `B_r(y) x (t - r^2, t]`; `coeffs` holds
/// one field or one per time level.
pub fn bmo_vanishing_modulus_parabolic(
    coeffs: &[MatrixField],
    st: &SpaceTimeGrid,
    r_max: f64,
    sampler: &BallSampler,
) -> Result<f64> {
    let grid = st.base();
    let levels = st.steps() + 1;
    if coeffs.len() != 1 && coeffs.len() != levels {
        return Err(Error::param("coeffs", format!("expected 1 or {levels} fields")));
    }
    if !(r_max >= grid.h() * (1.0 - BALL_SLACK)) {
        return Err(Error::param("R", format!("{r_max} is below the mesh width {}", grid.h())));
    }
    sampler.check(grid)?;
    let at = |m: usize| &coeffs[if coeffs.len() == 1 { 0 } else { m }];
    let mut best: f64 = 0.0;
    for m in 0..levels {
        let t = st.time(m);
        for &c in sampler.centers() {
            let x = grid.coords(c);
            for &r in sampler.radii().iter().filter(|r| **r <= r_max * (1.0 + BALL_SLACK)) {
                let ball = ball_slots(grid, x, r);
                let mut vals = Vec::new();
                for l in (0..=m).rev() {
                    if st.time(l) <= t - r * r {
                        break;
                    }
                    vals.extend(ball.iter().map(|&k| at(l).at(k)));
                }
                best = best.max(rms_deviation(&vals, grid.dim()));
            }
        }
    }
    Ok(best)
}

/// Unit spectral-norm probe matrices for `beta`.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    fixed: Vec<SymMat>,
}

impl ProbeSet {
    /// Basis matrices plus `count` seeded random ones.
    pub fn new(dim: usize, count: usize, seed: u64) -> Self {
        let mut fixed = if dim == 1 {
            vec![SymMat::new(1.0, 0.0, 0.0)]
        } else {
            vec![
                SymMat::new(1.0, 0.0, 0.0),
                SymMat::new(0.0, 0.0, 1.0),
                SymMat::new(0.0, 1.0, 0.0),
            ]
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..count {
            let m = random_symmetric(&mut rng, dim);
            let n = m.spectral_norm(dim);
            if n > 0.0 {
                fixed.push(m.scale(1.0 / n));
            }
        }
        ProbeSet { fixed }
    }

    pub fn len(&self) -> usize {
        self.fixed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty()
    }

    /// The fixed probes together with the eigenvector outer products of `d`
    /// and the matrix with the same eigenvectors and eigenvalue signs.
    fn for_difference(&self, d: &SymMat, dim: usize) -> Vec<SymMat> {
        let mut out = self.fixed.clone();
        if dim == 2 {
            let (lo, hi) = d.eigenvalues(2);
            let (vlo, vhi) = d.eigenvectors();
            let (plo, phi) = (SymMat::outer(vlo), SymMat::outer(vhi));
            out.push(plo);
            out.push(phi);
            out.push(plo.scale(lo.signum()).add(phi.scale(hi.signum())));
        }
        out
    }
}

/// `beta(x, x0) = max_M |F(x, M) - F(x0, M)|` over unit probes.
pub fn beta_at(family: &OperatorFamily, x: usize, x0: usize, probes: &ProbeSet) -> f64 {
    let dim = family.grid().dim();
    let mut best: f64 = 0.0;
    for a in family.members() {
        let d = a.at(x).sub(a.at(x0));
        for m in probes.for_difference(&d, dim) {
            best = best.max((family.eval_matrix(x, &m) - family.eval_matrix(x0, &m)).abs());
        }
    }
    best
}

/// `sup (avg_{B_r(x0)} beta(x, x0)^n)^(1/n)` over sampled centers and radii
/// at most `r0`.
pub fn beta_oscillation_modulus(
    family: &OperatorFamily,
    r0: f64,
    sampler: &BallSampler,
    probes: &ProbeSet,
) -> Result<f64> {
    let grid = family.grid();
    if !(r0 >= grid.h() * (1.0 - BALL_SLACK)) {
        return Err(Error::param("R0", format!("{r0} is below the mesh width {}", grid.h())));
    }
    sampler.check(grid)?;
    let n = grid.dim() as i32;
    let mut best: f64 = 0.0;
    for &c in sampler.centers() {
        let x0 = grid.coords(c);
        for &r in sampler.radii().iter().filter(|r| **r <= r0 * (1.0 + BALL_SLACK)) {
            let ball = ball_slots(grid, x0, r);
            let avg = ball.iter().map(|&k| beta_at(family, k, c, probes).powi(n)).sum::<f64>() / ball.len() as f64;
            best = best.max(avg.powf(1.0 / n as f64));
        }
    }
    Ok(best)
}

/// Holder exponent from Morrey regularity, `alpha = 1 - (n - theta) / p`.
pub fn holder_exponent(n: usize, p: f64, theta: f64) -> Result<f64> {
    if !(p + theta > n as f64) {
        return Err(Error::param(
            "p",
            format!("p + theta > n is required, got p = {p}, theta = {theta}, n = {n}"),
        ));
    }
    Ok(1.0 - (n as f64 - theta) / p)
}

const ALL_PAIRS_LIMIT: usize = 1500;

/// `max |g(x) - g(y)| / |x - y|^alpha` over node pairs: all pairs on small
/// grids, otherwise all pairs of a strided lattice subset plus every pair of
/// lattice neighbours.
pub fn holder_seminorm(g: &ScalarField, alpha: f64) -> Result<f64> {
    let grid = g.grid();
    let all: Vec<usize> = (0..grid.active_len()).collect();
    holder_seminorm_on(g, alpha, &all)
}

/// [`holder_seminorm`] restricted to the given slots.
pub fn holder_seminorm_on(g: &ScalarField, alpha: f64, slots: &[usize]) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param("alpha", format!("{alpha} is not in (0, 1]")));
    }
    let grid = g.grid();
    let v = g.values();
    let quotient = |a: usize, b: usize| {
        let (x, y) = (grid.coords(a), grid.coords(b));
        let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        (v[a] - v[b]).abs() / d.powf(alpha)
    };
    let mut subset = slots.to_vec();
    let mut best: f64 = 0.0;
    if slots.len() > ALL_PAIRS_LIMIT {
        let ratio = slots.len() as f64 / ALL_PAIRS_LIMIT as f64;
        let stride = ratio.powf(1.0 / grid.dim() as f64).ceil() as usize;
        subset.retain(|&s| {
            let (i, j) = grid.lattice_ij(s);
            i % stride == 0 && j % stride == 0
        });
        let mut member = vec![false; grid.active_len()];
        slots.iter().for_each(|&s| member[s] = true);
        for &s in slots {
            let (i, j) = grid.lattice_ij(s);
            let neighbours: &[(usize, usize)] = if grid.dim() == 1 {
                &[(i + 1, j)]
            } else {
                &[(i + 1, j), (i, j + 1), (i + 1, j + 1)]
            };
            for &(ni, nj) in neighbours {
                if let Some(t) = grid.slot_at(ni, nj).filter(|&t| member[t]) {
                    best = best.max(quotient(s, t));
                }
            }
            if grid.dim() == 2 && i > 0 {
                if let Some(t) = grid.slot_at(i - 1, j + 1).filter(|&t| member[t]) {
                    best = best.max(quotient(s, t));
                }
            }
        }
    }
    for (k, &a) in subset.iter().enumerate() {
        for &b in &subset[k + 1..] {
            best = best.max(quotient(a, b));
        }
    }
    Ok(best)
}

/// Residuals of the discrete complementarity system.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Complementarity {
    pub r_obstacle: f64,
    pub r_equation: f64,
    pub r_product: f64,
}

impl Complementarity {
    pub fn max(&self) -> f64 {
        self.r_obstacle.max(self.r_equation).max(self.r_product)
    }
}

/// Elliptic convention `Lu <= f`, `u >= psi`: `r_obstacle` over all nodes,
/// the other two over interior nodes.
pub fn complementarity_residual(
    u: &ScalarField,
    psi: &ScalarField,
    lu: &ScalarField,
    f: &ScalarField,
) -> Result<Complementarity> {
    for other in [psi, lu, f] {
        u.check_grid(other)?;
    }
    let mut c = Complementarity::default();
    accumulate(&mut c, u, psi, lu, f, 1.0, true);
    Ok(c)
}

fn accumulate(
    c: &mut Complementarity,
    u: &ScalarField,
    psi: &ScalarField,
    lu: &ScalarField,
    f: &ScalarField,
    sign: f64,
    equation: bool,
) {
    let grid = u.grid();
    for s in 0..grid.active_len() {
        c.r_obstacle = c.r_obstacle.max(psi.values()[s] - u.values()[s]);
    }
    if equation {
        for &s in grid.interior_slots() {
            let d = lu.values()[s] - f.values()[s];
            c.r_equation = c.r_equation.max(sign * d);
            c.r_product = c.r_product.max((d * (u.values()[s] - psi.values()[s])).abs());
        }
    }
}

/// Parabolic convention `u_t - Lu >= f`, `u >= psi`, with `pu = u_t - Lu`;
/// equation terms are taken at levels `1..=steps`.
pub fn complementarity_residual_parabolic(
    u: &SlabField,
    psi: &SlabField,
    pu: &SlabField,
    f: &SlabField,
) -> Result<Complementarity> {
    for other in [psi, pu, f] {
        u.check_grid(other)?;
    }
    let mut c = Complementarity::default();
    for m in 0..u.slices().len() {
        accumulate(&mut c, u.slice(m), psi.slice(m), pu.slice(m), f.slice(m), -1.0, m > 0);
    }
    Ok(c)
}
