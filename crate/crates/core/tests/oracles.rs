use obstacle_core::calculus::{apply_linear, OperatorFamily};
use obstacle_core::elliptic::{continuation_solve, PenalizedProblem, Pipeline};
use obstacle_core::field::{MatrixField, ScalarField, SymMat};
use obstacle_core::geometry::{build_grid, DomainPreset};
use obstacle_core::norms::complementarity_residual;
use obstacle_core::oracle::{
    analytic_1d, brute_force_lcp, psor_obstacle, random_instance, random_symmetric_instance,
};
use obstacle_core::penalty::{EpsSchedule, PenaltyShape};

fn schedule() -> EpsSchedule {
    EpsSchedule::new(0.1, 0.5, 7).unwrap()
}

#[test]
fn psor_agrees_with_enumeration_on_random_instances() {
    for seed in 0..40 {
        let inst = random_instance(seed, 12).unwrap();
        let exact = brute_force_lcp(&inst.a, &inst.f, &inst.psi).unwrap();
        let psor = psor_obstacle(&inst.a, &inst.f, &inst.psi, 1.0, 1e-13).unwrap();
        let d = exact.max_diff(&psor).unwrap();
        assert!(d < 1e-8, "seed {seed}: {d}");
    }
}

#[test]
fn psor_output_is_a_complementarity_solution() {
    let tol = 1e-12;
    for seed in 100..120 {
        let inst = random_instance(seed, 16).unwrap();
        let u = psor_obstacle(&inst.a, &inst.f, &inst.psi, 1.0, tol).unwrap();
        let lu = apply_linear(&inst.a, &u).unwrap();
        let c = complementarity_residual(&u, &inst.psi, &lu, &inst.f).unwrap();
        // equation residuals carry the operator scale; divide by the largest
        // diagonal weight to compare with a tolerance on u
        let diag = inst
            .a
            .values()
            .iter()
            .map(|m| 2.0 * (m.a11 + m.a22) / inst.a.grid().h().powi(2))
            .fold(0.0, f64::max);
        assert!(c.r_obstacle <= 10.0 * tol, "seed {seed}: {c:?}");
        assert!(c.r_equation / diag <= 10.0 * tol, "seed {seed}: {c:?}");
    }
}

#[test]
fn psor_does_not_depend_on_relaxation() {
    for seed in 200..215 {
        let inst = random_symmetric_instance(seed, 16).unwrap();
        let tol = 1e-12;
        let runs: Vec<ScalarField> = [1.0, 1.5, 1.9]
            .iter()
            .map(|&w| psor_obstacle(&inst.a, &inst.f, &inst.psi, w, tol).unwrap())
            .collect();
        for r in &runs[1..] {
            assert!(runs[0].max_diff(r).unwrap() < 1e-9);
        }
    }
}

#[test]
fn continuation_agrees_with_enumeration() {
    let sched = schedule();
    for seed in 300..330 {
        let inst = random_instance(seed, 16).unwrap();
        let exact = brute_force_lcp(&inst.a, &inst.f, &inst.psi).unwrap();
        let fam = OperatorFamily::single(inst.a.clone()).unwrap();
        let p = PenalizedProblem::new(
            fam,
            inst.f.clone(),
            inst.psi.clone(),
            PenaltyShape::new(sched.eps0).unwrap(),
            Pipeline::Raw,
        )
        .unwrap();
        let (u, _) = continuation_solve(&p, &sched.values()).unwrap();
        let d = u.max_diff(&exact).unwrap();
        assert!(d <= sched.last() + 1e-6, "seed {seed}: {d}");
        // the penalized solution sits above the discrete solution
        for s in 0..u.len() {
            assert!(u.values()[s] >= exact.values()[s] - 1e-8);
        }
    }
}

#[test]
fn cap_instance_enumeration_matches_psor_and_closed_form() {
    let cap = analytic_1d("parabolic-cap").unwrap();
    let g = build_grid(DomainPreset::Interval, 16).unwrap();
    let a = MatrixField::constant(&g, SymMat::identity());
    let (f, psi) = (cap.sample_f(&g), cap.sample_psi(&g));
    let exact = brute_force_lcp(&a, &f, &psi).unwrap();
    let psor = psor_obstacle(&a, &f, &psi, 1.5, 1e-13).unwrap();
    assert!(exact.max_diff(&psor).unwrap() < 1e-10);
    let analytic = cap.sample(&g).unwrap();
    let h = g.h();
    assert!(exact.max_diff(&analytic).unwrap() <= h * h);
    let center = g.nearest_slot([0.0, 0.0]).unwrap();
    assert!((exact.values()[center] - 0.5).abs() < 1e-12);
}

#[test]
fn raising_f_never_raises_the_solution() {
    // with Lu <= f, a larger f relaxes the supersolution condition, so the
    // least supersolution above psi can only move down
    for seed in 400..420 {
        let inst = random_instance(seed, 16).unwrap();
        let base = psor_obstacle(&inst.a, &inst.f, &inst.psi, 1.0, 1e-13).unwrap();
        let raised_f = inst.f.map(|v| v + 0.7);
        let raised = psor_obstacle(&inst.a, &raised_f, &inst.psi, 1.0, 1e-13).unwrap();
        for s in 0..base.len() {
            assert!(raised.values()[s] <= base.values()[s] + 1e-9, "seed {seed}");
        }
    }
}
