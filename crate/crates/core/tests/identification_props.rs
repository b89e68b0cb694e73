mod common;

use dosechoice::identification::matrix_rank;
use dosechoice::{
    bound_linear, bound_net_welfare, bound_outcome_prob, build_constraints, check_consistency, push_forward,
    Consistency, CostSpec, DoseGrid, OutcomeCell, OutcomeDistribution, Restrictions, ThresholdDistribution,
    ThresholdFunctional, TrialArm, TrialEvidence, WelfareSpec,
};
use proptest::prelude::*;

fn functional(grid: DoseGrid) -> impl Strategy<Value = ThresholdFunctional> {
    prop::collection::vec(-2.0f64..2.0, grid.cell_count())
        .prop_map(move |c| ThresholdFunctional::new(grid, c, 0.0).unwrap())
}

fn paper_welfare() -> WelfareSpec {
    WelfareSpec::new([1.0, 0.25, 0.75, 0.0]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bounds_contain_generating_and_witness_q(
        (q, ev, f) in (2usize..5).prop_flat_map(|t| (common::consistent_instance(t), functional(DoseGrid::new(t).unwrap())))
            .prop_map(|((q, ev), f)| (q, ev, f))
    ) {
        let cs = build_constraints(&ev, Restrictions::none(), ev.grid()).unwrap();
        let b = bound_linear(&cs, &f).unwrap();
        prop_assert!(b.contains(f.evaluate(&q), 1e-9), "{b:?} misses {}", f.evaluate(&q));
        let Consistency::Consistent { witness } = check_consistency(&ev, Restrictions::none(), ev.grid()).unwrap() else {
            panic!("generated evidence must be consistent");
        };
        prop_assert!(b.contains(f.evaluate(&witness), 1e-8));
    }

    #[test]
    fn rank_is_three_per_arm_plus_one((_, ev) in (2usize..6).prop_flat_map(common::consistent_instance)) {
        let cs = build_constraints(&ev, Restrictions::none(), ev.grid()).unwrap();
        prop_assert_eq!(cs.num_columns(), ev.grid().cell_count());
        prop_assert_eq!(cs.rank(), 3 * ev.arms().len() + 1);
        prop_assert_eq!(matrix_rank(&cs.matrix(), 1e-9), 3 * ev.arms().len() + 1);
    }

    #[test]
    fn intervals_collapse_at_trial_doses((_, ev) in (1usize..5).prop_flat_map(common::consistent_instance)) {
        let cs = build_constraints(&ev, Restrictions::none(), ev.grid()).unwrap();
        for arm in ev.arms() {
            for cell in OutcomeCell::ALL {
                let b = bound_outcome_prob(&cs, arm.dose, cell).unwrap();
                prop_assert!(b.width() <= 1e-8);
                prop_assert!((b.lo - arm.outcomes.prob(cell)).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn cell_bounds_bracket_one((_, ev) in (1usize..5).prop_flat_map(common::consistent_instance)) {
        let cs = build_constraints(&ev, Restrictions::none(), ev.grid()).unwrap();
        for t in ev.grid().doses() {
            let bounds: Vec<_> = OutcomeCell::ALL.iter().map(|&c| bound_outcome_prob(&cs, t, c).unwrap()).collect();
            prop_assert!(bounds.iter().map(|b| b.lo).sum::<f64>() <= 1.0 + 1e-9);
            prop_assert!(bounds.iter().map(|b| b.hi).sum::<f64>() >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn extra_arm_never_widens(
        (q, extra) in (2usize..5).prop_flat_map(|t| (common::threshold_distribution(t), 0..=t)),
        w in common::welfare_values(),
    ) {
        let grid = *q.grid();
        let base_doses = vec![if extra == 0 { grid.max_dose() } else { 0 }];
        let mut more = base_doses.clone();
        more.push(extra);
        more.sort();
        more.dedup();
        let small = build_constraints(&TrialEvidence::from_threshold_distribution(&q, &base_doses).unwrap(), Restrictions::none(), &grid).unwrap();
        let large = build_constraints(&TrialEvidence::from_threshold_distribution(&q, &more).unwrap(), Restrictions::none(), &grid).unwrap();
        let w = WelfareSpec::new(w).unwrap();
        let g = CostSpec::zero(&grid);
        for t in grid.doses() {
            let a = bound_net_welfare(&small, t, &w, &g).unwrap();
            let b = bound_net_welfare(&large, t, &w, &g).unwrap();
            prop_assert!(b.lo >= a.lo - 1e-9 && b.hi <= a.hi + 1e-9);
        }
    }

    #[test]
    fn restrictions_never_widen(
        (q, doses) in (2usize..5).prop_flat_map(|t| (common::threshold_distribution(t), common::dose_subset(t))),
        w in common::welfare_values(),
        concurrent in any::<bool>(),
    ) {
        // Move mass so the generating q satisfies the restriction under test.
        let grid = *q.grid();
        let q = if concurrent {
            ThresholdDistribution::normalized(grid, (0..grid.cell_count()).map(|k| {
                let (h, i) = (k / grid.support_len(), k % grid.support_len());
                if h == i { q.disease_thresholds()[h] + 1e-3 } else { 0.0 }
            }).collect()).unwrap()
        } else {
            ThresholdDistribution::normalized(grid, (0..grid.cell_count()).map(|k| {
                let (h, i) = (k / grid.support_len(), k % grid.support_len());
                if i == 0 { 0.0 } else { q.get(h, i) + 1e-3 }
            }).collect()).unwrap()
        };
        let ev = TrialEvidence::from_threshold_distribution(&q, &doses).unwrap();
        let r = Restrictions { no_ae_at_zero: !concurrent, concurrent_thresholds: concurrent, independence: false };
        let loose = build_constraints(&ev, Restrictions::none(), &grid).unwrap();
        let tight = build_constraints(&ev, r, &grid).unwrap();
        prop_assert!(tight.is_feasible().unwrap());
        let w = WelfareSpec::new(w).unwrap();
        let g = CostSpec::zero(&grid);
        for t in grid.doses() {
            let a = bound_net_welfare(&loose, t, &w, &g).unwrap();
            let b = bound_net_welfare(&tight, t, &w, &g).unwrap();
            prop_assert!(b.lo >= a.lo - 1e-9 && b.hi <= a.hi + 1e-9);
            prop_assert!(b.contains(dosechoice::model::net_welfare_profile(&q, &w, &g).unwrap()[t], 1e-9));
        }
    }

    #[test]
    fn single_dose_grid_matches_vertex_enumeration(
        (_, ev) in common::consistent_instance(1),
        w in common::welfare_values(),
        g in common::cost_values(1),
        no_ae in any::<bool>(),
    ) {
        let grid = *ev.grid();
        let r = Restrictions { no_ae_at_zero: no_ae, ..Restrictions::none() };
        let cs = build_constraints(&ev, r, &grid).unwrap();
        let Ok(true) = cs.is_feasible() else { return Ok(()) };
        let (a, b) = (cs.matrix(), cs.rhs());
        let w = WelfareSpec::new(w).unwrap();
        let g = CostSpec::new(&grid, g).unwrap();
        for t in grid.doses() {
            for cell in OutcomeCell::ALL {
                let f = ThresholdFunctional::outcome_indicator(grid, t, cell).unwrap();
                let (lo, hi) = common::vertex_extremes(&a, &b, f.coeffs()).unwrap();
                let got = bound_outcome_prob(&cs, t, cell).unwrap();
                prop_assert!((got.lo - lo).abs() < 1e-9 && (got.hi - hi).abs() < 1e-9);
            }
            let f = dosechoice::net_welfare_coefficients(&grid, t, &w, &g).unwrap();
            let (lo, hi) = common::vertex_extremes(&a, &b, f.coeffs()).unwrap();
            let got = bound_net_welfare(&cs, t, &w, &g).unwrap();
            prop_assert!((got.lo - (lo - g.at(t))).abs() < 1e-9 && (got.hi - (hi - g.at(t))).abs() < 1e-9);
        }
    }
}

#[test]
fn single_arm_at_zero_bounds_dose_one_welfare() {
    let grid = DoseGrid::new(1).unwrap();
    let ev = TrialEvidence::new(grid, vec![TrialArm::new(0, OutcomeDistribution::new([0.25, 0.75, 0.0, 0.0]).unwrap())]).unwrap();
    let cs = build_constraints(&ev, Restrictions::none(), &grid).unwrap();
    let w = paper_welfare();
    let g = CostSpec::zero(&grid);
    let f = dosechoice::net_welfare_coefficients(&grid, 1, &w, &g).unwrap();
    let (lo, hi) = common::vertex_extremes(&cs.matrix(), &cs.rhs(), f.coeffs()).unwrap();
    assert!((lo - 0.1875).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
    let b = bound_linear(&cs, &f).unwrap();
    assert!((b.lo - lo).abs() < 1e-9 && (b.hi - hi).abs() < 1e-9, "{b:?}");
}

#[test]
fn illustration_functionals() {
    let ev = dosechoice::illustration::evidence();
    let grid = *ev.grid();
    let cs = build_constraints(&ev, Restrictions::none(), &grid).unwrap();

    let ones = ThresholdFunctional::from_fn(grid, |_, _| 1.0).unwrap();
    let b = bound_linear(&cs, &ones).unwrap();
    assert!((b.lo - 1.0).abs() < 1e-9 && (b.hi - 1.0).abs() < 1e-9);

    let quadrant = ThresholdFunctional::from_fn(grid, |h, i| if h > 1 && i <= 1 { 1.0 } else { 0.0 }).unwrap();
    let b = bound_linear(&cs, &quadrant).unwrap();
    assert!(b.lo.abs() < 1e-9 && (b.hi - 2.0 / 3.0).abs() < 1e-9);

    let w = paper_welfare();
    let b = bound_net_welfare(&cs, 1, &w, &CostSpec::linear(&grid, 0.05).unwrap()).unwrap();
    assert!((b.lo - (13.0 / 48.0 - 0.05)).abs() < 1e-9 && (b.hi - 0.7625).abs() < 1e-9);
    let b = bound_net_welfare(&cs, 0, &w, &CostSpec::zero(&grid)).unwrap();
    assert!((b.lo - 0.4375).abs() < 1e-9 && b.width() < 1e-9);

    let restricted = build_constraints(&ev, Restrictions { no_ae_at_zero: true, ..Restrictions::none() }, &grid).unwrap();
    assert_eq!(restricted.rows().len(), cs.rows().len() + grid.support_len());
    assert!(restricted.is_feasible().unwrap());
}

#[test]
fn full_design_system_is_satisfied_by_its_generator() {
    let grid = DoseGrid::new(3).unwrap();
    let q = ThresholdDistribution::normalized(grid, (0..grid.cell_count()).map(|k| ((k * 7) % 5) as f64).collect()).unwrap();
    let ev = TrialEvidence::from_threshold_distribution(&q, &[0, 1, 2, 3]).unwrap();
    let cs = build_constraints(&ev, Restrictions::none(), &grid).unwrap();
    for row in cs.rows() {
        let lhs: f64 = row.coeffs.iter().zip(q.as_slice()).map(|(a, x)| a * x).sum();
        assert!((lhs - row.rhs).abs() < 1e-12);
    }
    for t in grid.doses() {
        let p = push_forward(&q, t).unwrap();
        for cell in OutcomeCell::ALL {
            assert!(bound_outcome_prob(&cs, t, cell).unwrap().contains(p.prob(cell), 1e-9));
        }
    }
}

#[test]
fn monotonicity_violation_is_certified() {
    let grid = DoseGrid::new(2).unwrap();
    let ev = TrialEvidence::new(
        grid,
        vec![
            TrialArm::new(0, OutcomeDistribution::new([0.5, 0.0, 0.5, 0.0]).unwrap()),
            TrialArm::new(2, OutcomeDistribution::new([1.0, 0.0, 0.0, 0.0]).unwrap()),
        ],
    )
    .unwrap();
    let cs = build_constraints(&ev, Restrictions::none(), &grid).unwrap();
    match check_consistency(&ev, Restrictions::none(), &grid).unwrap() {
        Consistency::Inconsistent { certificate, violations } => {
            assert!(!violations.is_empty());
            let (a, b) = (cs.matrix(), cs.rhs());
            assert!(certificate.iter().zip(&b).map(|(y, b)| y * b).sum::<f64>() > 0.0);
            for j in 0..cs.num_columns() {
                assert!(a.iter().zip(&certificate).map(|(row, y)| row[j] * y).sum::<f64>() <= 1e-8);
            }
        }
        other => panic!("{other:?}"),
    }
    assert!(bound_outcome_prob(&cs, 1, OutcomeCell::Neither).is_err());
}
