use std::f64::consts::PI;

use obstacle_core::calculus::{CoefficientPreset, OperatorFamily};
use obstacle_core::field::{MatrixField, ScalarField, SymMat};
use obstacle_core::geometry::{build_grid, DomainPreset};
use obstacle_core::norms::{
    a1_ratio, ball_slots, beta_at, beta_oscillation_modulus, bmo_vanishing_modulus, holder_exponent,
    holder_seminorm, maximal_char_ball, morrey_norm, muckenhoupt_constant, muckenhoupt_products, weighted_lp_norm,
    BallSampler, ProbeSet, WeightField,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ODD_GRIDS: [usize; 4] = [5, 65, 1025, 16385];

fn power_constant(cells: usize, gamma: f64) -> f64 {
    let g = build_grid(DomainPreset::Interval, cells).unwrap();
    let w = WeightField::power(&g, gamma, 2.0).unwrap();
    let sampler = BallSampler::dyadic_covering(&g, 1).unwrap();
    muckenhoupt_constant(&w, 2.0, &sampler).unwrap()
}

#[test]
fn unit_weight_has_constant_one() {
    for preset in [DomainPreset::Interval, DomainPreset::Square, DomainPreset::Disk] {
        let g = build_grid(preset, 16).unwrap();
        let w = WeightField::constant(&g, 1.0, 2.0).unwrap();
        for s in [1.5, 2.0, 4.0] {
            let sampler = BallSampler::dyadic_covering(&g, 1).unwrap();
            assert_eq!(muckenhoupt_constant(&w, s, &sampler).unwrap(), 1.0);
        }
    }
}

#[test]
fn integrable_power_weight_is_stable_under_refinement() {
    let values: Vec<f64> = ODD_GRIDS.iter().map(|&n| power_constant(n, 0.5)).collect();
    let changes: Vec<f64> = values.windows(2).map(|w| (w[1] / w[0] - 1.0).abs()).collect();
    assert!(changes.windows(2).all(|c| c[1] < c[0]), "{values:?}");
    assert!(changes[changes.len() - 1] < 0.02, "{values:?}");
    assert!(values.iter().all(|v| *v < 3.0));
}

#[test]
fn non_integrable_power_weight_blows_up() {
    let values: Vec<f64> = ODD_GRIDS.iter().map(|&n| power_constant(n, -2.0)).collect();
    for w in values.windows(2) {
        assert!(w[1] >= 10.0 * w[0], "{values:?}");
    }
}

#[test]
fn maximal_function_of_a_ball_decays_on_dyadic_rings() {
    for (preset, cells) in [(DomainPreset::Interval, 512), (DomainPreset::Square, 128)] {
        let g = build_grid(preset, cells).unwrap();
        let r = 0.125;
        let m = maximal_char_ball(&g, [0.0, 0.0], r).unwrap();
        let n = g.dim() as i32;
        for s in 0..g.active_len() {
            let x = g.coords(s);
            let d = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let v = m.values()[s];
            assert!((0.0..=1.0).contains(&v));
            // the smallest sampled radius is h
            if d <= r - g.h() {
                assert_eq!(v, 1.0);
            }
            for k in [2, 3] {
                let lo = r * 2f64.powi(k);
                if d >= lo && d < 2.0 * lo {
                    let bound = 2f64.powi(-n * (k - 1));
                    assert!(v <= 1.05 * bound, "k = {k}, d = {d}: {v} > {bound}");
                }
            }
        }
    }
}

#[test]
fn powers_of_the_maximal_function_have_bounded_a1_ratio() {
    let mut ratios = Vec::new();
    for cells in [32, 64] {
        let g = build_grid(DomainPreset::Square, cells).unwrap();
        let m = maximal_char_ball(&g, [0.1, -0.2], 0.2).unwrap();
        let v = m.map(|x| x.powf(0.5));
        let sampler = BallSampler::dyadic_covering(&g, 2).unwrap();
        ratios.push(a1_ratio(&v, &sampler).unwrap());
    }
    assert!(ratios.iter().all(|r| r.is_finite() && *r >= 1.0 && *r < 10.0), "{ratios:?}");
    assert!((ratios[1] / ratios[0] - 1.0).abs() < 0.25, "{ratios:?}");
}

#[test]
fn morrey_norm_of_disk_constant() {
    for cells in [64, 128] {
        let g = build_grid(DomainPreset::Disk, cells).unwrap();
        let one = ScalarField::constant(&g, 1.0);
        let center = g.nearest_slot([0.0, 0.0]).unwrap();
        let sampler = BallSampler::dyadic_covering(&g, 1).unwrap();
        let sampler = BallSampler::new(&g, vec![center], sampler.radii().to_vec(), "origin").unwrap();
        let v = morrey_norm(&one, 2.0, 1.0, &sampler).unwrap();
        assert!((v / PI.sqrt() - 1.0).abs() < 0.03, "{v}");
        // as theta -> 0 the norm tends to the plain L^p norm
        let lp = weighted_lp_norm(&one, &WeightField::constant(&g, 1.0, 2.0).unwrap(), 2.0).unwrap();
        let v0 = morrey_norm(&one, 2.0, 1e-9, &BallSampler::dyadic_covering(&g, 1).unwrap()).unwrap();
        assert!((v0 / lp - 1.0).abs() < 1e-6);
    }
}

#[test]
fn larger_samplers_give_larger_suprema() {
    let g = build_grid(DomainPreset::Square, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = ScalarField::from_fn(&g, |_| rng.gen_range(-1.0..1.0));
    let w = WeightField::new(f.map(|v| 1.0 + v * v), 2.0).unwrap();
    let coarse = BallSampler::dyadic(&g, 3, 4).unwrap();
    let fine = BallSampler::dyadic(&g, 5, 2).unwrap();
    assert!(morrey_norm(&f, 2.0, 1.0, &coarse).unwrap() <= morrey_norm(&f, 2.0, 1.0, &fine).unwrap());
    assert!(muckenhoupt_constant(&w, 2.0, &coarse).unwrap() <= muckenhoupt_constant(&w, 2.0, &fine).unwrap());
    let t = fine.truncated(g.h() * 2.0).unwrap();
    assert_eq!(t.radii().len(), 2);
    assert!(fine.truncated(g.h() / 2.0).is_none());
}

#[test]
fn checkerboard_oscillation_does_not_vanish() {
    let g = build_grid(DomainPreset::Square, 64).unwrap();
    let sampler = BallSampler::dyadic_covering(&g, 2).unwrap();
    let cb = OperatorFamily::from_presets(&[CoefficientPreset::Checkerboard { period: 0.25, jump: 1.0 }], &g).unwrap();
    let id = OperatorFamily::from_presets(&[CoefficientPreset::Identity], &g).unwrap();
    let osc = OperatorFamily::from_presets(&[CoefficientPreset::Oscillatory { frequency: 1.0, amplitude: 0.3 }], &g)
        .unwrap();
    let small = 2.0 * g.h();
    assert_eq!(bmo_vanishing_modulus(&id.members()[0], small, &sampler).unwrap(), 0.0);
    // a ball straddling a jump of size 1 between multiples of the identity
    assert!(bmo_vanishing_modulus(&cb.members()[0], small, &sampler).unwrap() > 0.3);
    let rough = bmo_vanishing_modulus(&osc.members()[0], 0.5, &sampler).unwrap();
    let fine = bmo_vanishing_modulus(&osc.members()[0], small, &sampler).unwrap();
    assert!(fine < rough / 4.0, "{fine} vs {rough}");
}

#[test]
fn beta_of_a_linear_operator_is_the_trace_norm_of_the_difference() {
    let g = build_grid(DomainPreset::Square, 16).unwrap();
    let a = MatrixField::from_fn(&g, |x| SymMat::new(2.0 + x[0], 0.4 * x[1], 1.5 - 0.5 * x[0] * x[1])).unwrap();
    let fam = OperatorFamily::single(a.clone()).unwrap();
    let probes = ProbeSet::new(2, 8, 3);
    let x0 = g.nearest_slot([0.0, 0.0]).unwrap();
    for s in (0..g.active_len()).step_by(7) {
        let (l1, l2) = a.at(s).sub(a.at(x0)).eigenvalues(2);
        let expected = l1.abs() + l2.abs();
        assert!((beta_at(&fam, s, x0, &probes) - expected).abs() < 1e-12);
    }
    assert_eq!(beta_at(&fam, x0, x0, &probes), 0.0);
    let constant = OperatorFamily::from_presets(&[CoefficientPreset::Diagonal { a11: 1.0, a22: 4.0 }], &g).unwrap();
    let sampler = BallSampler::dyadic(&g, 3, 2).unwrap();
    assert_eq!(beta_oscillation_modulus(&constant, 0.5, &sampler, &probes).unwrap(), 0.0);
}

#[test]
fn holder_seminorm_of_a_power_is_one() {
    let g = build_grid(DomainPreset::Square, 16).unwrap();
    for alpha in [0.25, 0.5, 0.75, 1.0] {
        let f = ScalarField::from_fn(&g, |x| (x[0] * x[0] + x[1] * x[1]).sqrt().powf(alpha));
        assert!((holder_seminorm(&f, alpha).unwrap() - 1.0).abs() < 1e-12);
    }
    assert_eq!(holder_exponent(2, 4.0, 1.0).unwrap(), 0.75);
    assert!(holder_exponent(2, 1.0, 1.0).is_err());
}

#[test]
fn ball_slots_count_lattice_points() {
    let g = build_grid(DomainPreset::Square, 32).unwrap();
    let h = g.h();
    assert_eq!(ball_slots(&g, [0.0, 0.0], h).len(), 5);
    assert_eq!(ball_slots(&g, [0.0, 0.0], 2f64.sqrt() * h).len(), 9);
    assert_eq!(ball_slots(&g, [1.0, 1.0], h).len(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn products_decrease_in_the_exponent(seed in 0u64..10_000, s1 in 1.2f64..3.0, ds in 0.0f64..3.0, square in any::<bool>()) {
        let preset = if square { DomainPreset::Square } else { DomainPreset::Interval };
        let g = build_grid(preset, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = WeightField::new(ScalarField::from_fn(&g, |_| rng.gen_range(0.01..5.0)), s1).unwrap();
        let sampler = BallSampler::dyadic_covering(&g, 1).unwrap();
        let p1 = muckenhoupt_products(&w, s1, &sampler).unwrap();
        let p2 = muckenhoupt_products(&w, s1 + ds, &sampler).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            prop_assert!(*b <= a * (1.0 + 1e-12));
            prop_assert!(*b >= 1.0 - 1e-12);
        }
    }
}
