use std::f64::consts::PI;

use obstacle_core::calculus::{CoefficientPreset, OperatorFamily};
use obstacle_core::elliptic::{Pipeline, FixedPointOptions};
use obstacle_core::field::{FieldExpr, MatrixField, ScalarField, SlabField, SymMat};
use obstacle_core::geometry::{build_grid, DomainPreset, SpaceTimeGrid};
use obstacle_core::oracle::{analytic_1d, random_monotone_coefficients};
use obstacle_core::parabolic::{
    check_parabolic_comparison, parabolic_operator, shifted_barrier_margin, solve_parabolic_obstacle,
    solve_parabolic_obstacle_with, solve_parabolic_unconstrained, ParabolicProblem,
};
use obstacle_core::penalty::EpsSchedule;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn slab_from(st: &std::sync::Arc<SpaceTimeGrid>, f: impl Fn(&[f64], f64) -> f64) -> SlabField {
    let slices = (0..=st.steps())
        .map(|m| ScalarField::from_fn(st.base(), |x| f(x, st.time(m))))
        .collect();
    SlabField::new(st.clone(), slices).unwrap()
}

#[test]
fn heat_equation_converges_in_time_and_space() {
    // u = t^2 sin(pi x) solves u_t - u_xx = (2t + pi^2 t^2) sin(pi x)
    let mut errors = Vec::new();
    for k in 0..3 {
        let cells = 8 << k;
        let steps = 4 << (2 * k);
        let g = build_grid(DomainPreset::Interval, cells).unwrap();
        let st = SpaceTimeGrid::new(g.clone(), 1.0, steps).unwrap();
        let f = slab_from(&st, |x, t| (2.0 * t + PI * PI * t * t) * (PI * x[0]).sin());
        let exact = slab_from(&st, |x, t| t * t * (PI * x[0]).sin());
        let u = solve_parabolic_unconstrained(&[MatrixField::constant(&g, SymMat::identity())], &f).unwrap();
        errors.push(u.max_diff(&exact).unwrap());
    }
    for w in errors.windows(2) {
        let rate = w[0] / w[1];
        assert!((3.0..5.0).contains(&rate), "{errors:?}");
    }
}

#[test]
fn long_time_limit_is_the_elliptic_obstacle_solution() {
    let membrane = analytic_1d("sagging-membrane").unwrap();
    let g = build_grid(DomainPreset::Interval, 64).unwrap();
    let st = SpaceTimeGrid::new(g.clone(), 10.0, 200).unwrap();
    // the elliptic data Lu <= 2 becomes u_t - Lu >= -2
    let f = SlabField::constant(&st, -membrane.f(0.0));
    let psi = SlabField::constant(&st, membrane.psi(0.0));
    let p = ParabolicProblem::new(vec![MatrixField::constant(&g, SymMat::identity())], f, psi, Pipeline::Raw).unwrap();
    let sched = EpsSchedule::new(0.02, 0.5, 5).unwrap();
    let (u, _) = solve_parabolic_obstacle(&p, &sched.values()).unwrap();
    let exact = membrane.sample(&g).unwrap();
    let h = g.h();
    let d = u.last().max_diff(&exact).unwrap();
    assert!(d <= sched.last() + h * h, "{d}");
}

fn moving_obstacle_problem(cells: usize, steps: usize) -> ParabolicProblem {
    let g = build_grid(DomainPreset::Square, cells).unwrap();
    let st = SpaceTimeGrid::new(g.clone(), 0.5, steps).unwrap();
    // a dome rising from below zero, with a source pushing the state down
    let psi = slab_from(&st, |x, t| (0.4 * t / 0.5 - 0.05) - 0.8 * (x[0] * x[0] + x[1] * x[1]));
    let psi = SlabField::new(
        st.clone(),
        psi.slices()
            .iter()
            .enumerate()
            .map(|(m, s)| {
                let mut s = s.clone();
                for slot in 0..g.active_len() {
                    if m == 0 || !g.is_interior(slot) {
                        s.values_mut()[slot] = s.values()[slot].min(0.0);
                    }
                }
                s
            })
            .collect(),
    )
    .unwrap();
    let f = SlabField::constant(&st, -1.0);
    let a = OperatorFamily::from_presets(&[CoefficientPreset::RotatedAnisotropic { angle: 0.3, ratio: 1.5 }], &g)
        .unwrap()
        .members()[0]
        .clone();
    ParabolicProblem::new(vec![a], f, psi, Pipeline::Raw).unwrap()
}

#[test]
fn penalized_march_is_a_supersolution_above_the_shifted_obstacle() {
    let p = moving_obstacle_problem(20, 20);
    let sched = EpsSchedule::new(0.1, 0.5, 5).unwrap();
    let (u, rep) = solve_parabolic_obstacle(&p, &sched.values()).unwrap();
    assert!(rep.fixed_point_residual <= rep.tol_fp);
    let margin = shifted_barrier_margin(&u, p.psi(), sched.last()).unwrap();
    assert!(margin >= -10.0 * rep.tol_fp, "{margin}");
    let data = p.prepared().unwrap();
    let pu = parabolic_operator(&data.coeffs, &u).unwrap();
    let grid = p.grid().base();
    let scale = 1.0 / p.grid().dt() + 4.0 / grid.h().powi(2);
    for m in 1..=p.grid().steps() {
        for &s in grid.interior_slots() {
            let defect = pu.slice(m).values()[s] - data.f.slice(m).values()[s];
            assert!(defect >= -scale * rep.tol_fp, "level {m}: {defect}");
        }
    }
    // the obstacle is active somewhere, so the penalty did real work
    let free = solve_parabolic_unconstrained(&data.coeffs, &data.f).unwrap();
    assert!(u.max_diff(&free).unwrap() > 0.1);
}

#[test]
fn march_is_reproducible() {
    let p = moving_obstacle_problem(12, 10);
    let sched = [0.1, 0.05];
    let (a, ra) = solve_parabolic_obstacle(&p, &sched).unwrap();
    let (b, rb) = solve_parabolic_obstacle(&p, &sched).unwrap();
    assert_eq!(a.max_diff(&b).unwrap(), 0.0);
    assert_eq!(ra.outer_iters, rb.outer_iters);
}

#[test]
fn picard_march_agrees_with_newton_for_large_eps() {
    let p = moving_obstacle_problem(10, 8);
    let (a, _) = solve_parabolic_obstacle(&p, &[0.2]).unwrap();
    let (b, _) = solve_parabolic_obstacle_with(&p, &[0.2], &FixedPointOptions::picard(0.1, 5000)).unwrap();
    assert!(a.max_diff(&b).unwrap() < 1e-6);
}

#[test]
fn time_dependent_coefficients_are_accepted() {
    let g = build_grid(DomainPreset::Interval, 16).unwrap();
    let st = SpaceTimeGrid::new(g.clone(), 0.5, 8).unwrap();
    let coeffs: Vec<MatrixField> = (0..=8)
        .map(|m| MatrixField::constant(&g, SymMat::identity().scale(1.0 + 0.1 * m as f64)))
        .collect();
    let f = FieldExpr::TimeRamp { rate: 1.0 }.sample_slab(&st).unwrap();
    let psi = SlabField::constant(&st, -0.2);
    let p = ParabolicProblem::new(coeffs.clone(), f, psi, Pipeline::Raw).unwrap();
    let (u, _) = solve_parabolic_obstacle(&p, &[0.1]).unwrap();
    assert!(check_parabolic_comparison(&coeffs, &u).unwrap());
    assert!(ParabolicProblem::new(coeffs[..3].to_vec(), p.f().clone(), p.psi().clone(), Pipeline::Raw).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn nonnegative_sources_give_nonnegative_marches(seed in 0u64..10_000, square in any::<bool>(), cells in 4usize..12, steps in 1usize..8) {
        let preset = if square { DomainPreset::Square } else { DomainPreset::Interval };
        let g = build_grid(preset, cells).unwrap();
        let st = SpaceTimeGrid::new(g.clone(), 0.3, steps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_monotone_coefficients(&g, &mut rng).unwrap();
        let slices = (0..=steps).map(|_| ScalarField::from_fn(&g, |_| rng.gen_range(0.0..2.0))).collect();
        let f = SlabField::new(st, slices).unwrap();
        let u = solve_parabolic_unconstrained(std::slice::from_ref(&a), &f).unwrap();
        prop_assert!(check_parabolic_comparison(&[a], &u).unwrap());
        prop_assert!(u.slices().iter().all(|s| s.min() >= 0.0));
    }
}
