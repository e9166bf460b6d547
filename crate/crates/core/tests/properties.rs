use std::collections::BTreeSet;

use emsm_core::bounds::{
    aggregate_strata, emsm_arm_bounds, psi_factors, ArmSummary, DiscreteDist, Interval, OutcomeSpec, SensitivityParams,
    StratumBounds, WorstCaseConstruction,
};
use emsm_core::data::{ColumnRoles, Dataset};
use emsm_core::dv::{
    dmsm_bounds, dv_original_bounds, dv_sharp_bounds, rmsm_bounds, sjolander_bounds, theta_alignment_grid,
    theta_plus_minus, BinaryStratum, DvParams,
};
use emsm_core::dv_sample::{percentile, resample_indices};
use emsm_core::estimate::{wald_intervals, BoundEstimate};
use emsm_core::oracle::{enumerate_emsm_bound, evaluate_construction, grid_slack, LatentConstruction, OracleProblem};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn dist_strategy(max: usize) -> impl Strategy<Value = DiscreteDist> {
    (prop::collection::btree_set(-20i32..=20, 1..=max), prop::collection::vec(0.05f64..1.0, max)).prop_map(
        |(pts, w): (BTreeSet<i32>, Vec<f64>)| {
            let support: Vec<f64> = pts.iter().map(|v| *v as f64 / 4.0).collect();
            let w = &w[..support.len()];
            let total: f64 = w.iter().sum();
            DiscreteDist::new(support, w.iter().map(|v| v / total).collect()).unwrap()
        },
    )
}

fn recommended(lambda: f64, delta: f64) -> SensitivityParams {
    SensitivityParams::symmetric(lambda, OutcomeSpec::Recommended { delta }).unwrap()
}

fn arm_bounds(params: &SensitivityParams, dist: &DiscreteDist) -> Interval {
    emsm_arm_bounds(params, &ArmSummary::from_dist(dist, params.tau()))
}

fn contains(outer: Interval, inner: Interval, tol: f64) -> bool {
    outer.lower <= inner.lower + tol && inner.upper <= outer.upper + tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bounds_nest_in_lambda(dist in dist_strategy(8), l in 1.0f64..5.0, step in 0.0f64..3.0, delta in 0.0f64..=1.0) {
        let narrow = arm_bounds(&recommended(l, delta), &dist);
        let wide = arm_bounds(&recommended(l + step, delta), &dist);
        prop_assert!(contains(wide, narrow, 1e-10), "{narrow:?} not inside {wide:?}");
    }

    #[test]
    fn bounds_nest_in_delta(dist in dist_strategy(8), l in 1.0f64..5.0, d in 0.0f64..=1.0, step in 0.0f64..=1.0) {
        let d2 = (d + step).min(1.0);
        let narrow = arm_bounds(&recommended(l, d), &dist);
        let wide = arm_bounds(&recommended(l, d2), &dist);
        prop_assert!(contains(wide, narrow, 1e-10));
    }

    #[test]
    fn bounds_contain_identified_mean(dist in dist_strategy(8), l in 1.0f64..8.0, delta in 0.0f64..=1.0) {
        let b = arm_bounds(&recommended(l, delta), &dist);
        let m = dist.mean();
        prop_assert!(b.lower <= m + 1e-12 && m <= b.upper + 1e-12);
        let s = dist.support();
        prop_assert!(b.lower >= s[0] - 1e-12 && b.upper <= s[s.len() - 1] + 1e-12);
    }

    #[test]
    fn specification_collapses(dist in dist_strategy(8), l1 in 0.05f64..1.0, l2 in 1.0f64..6.0) {
        let full = SensitivityParams::new(l1, l2, OutcomeSpec::Recommended { delta: 1.0 }).unwrap();
        let msm = SensitivityParams::msm(l1, l2).unwrap();
        let a = arm_bounds(&full, &dist);
        let b = arm_bounds(&msm, &dist);
        prop_assert!((a.lower - b.lower).abs() <= 1e-12 && (a.upper - b.upper).abs() <= 1e-12);
        let none = SensitivityParams::new(l1, l2, OutcomeSpec::Recommended { delta: 0.0 }).unwrap();
        let c = arm_bounds(&none, &dist);
        prop_assert!((c.lower - dist.mean()).abs() <= 1e-12 && (c.upper - dist.mean()).abs() <= 1e-12);
    }

    #[test]
    fn psi_in_unit_interval(dist in dist_strategy(8), l1 in 0.05f64..1.0, l2 in 1.0f64..6.0, delta in 0.0f64..=1.0) {
        let p = SensitivityParams::new(l1, l2, OutcomeSpec::Recommended { delta }).unwrap();
        let (up, lo) = psi_factors(&p, &ArmSummary::from_dist(&dist, p.tau()));
        prop_assert!((0.0..=1.0).contains(&up) && (0.0..=1.0).contains(&lo));
    }

    #[test]
    fn quantile_loss_ratio_bounded(dist in dist_strategy(10), tau in 0.5f64..0.999) {
        let a = dist.quantile_loss(1.0 - tau);
        let b = dist.quantile_loss(tau);
        let ratio = if a == 0.0 && b == 0.0 { 1.0 } else { a / b };
        let hi = tau / (1.0 - tau);
        prop_assert!(ratio >= (1.0 - tau) / tau - 1e-12 * hi && ratio <= hi * (1.0 + 1e-12));
    }

    #[test]
    fn worst_case_constructions_are_feasible(dist in dist_strategy(6), l1 in 0.1f64..1.0, l2 in 1.0f64..5.0, delta in 0.0f64..=1.0) {
        let spec = OutcomeSpec::Recommended { delta };
        let params = SensitivityParams::new(l1, l2, spec).unwrap();
        let formula = arm_bounds(&params, &dist);
        let problem = OracleProblem::from_spec(dist.clone(), l1, l2, spec);
        for (c, target) in [
            (WorstCaseConstruction::upper(&params, &dist), formula.upper),
            (WorstCaseConstruction::lower(&params, &dist), formula.lower),
        ] {
            let latent = LatentConstruction { laws: c.laws.clone(), prob_u1: c.prob_u1, lambda: c.lambda };
            let check = evaluate_construction(&problem, &latent, 1e-10);
            prop_assert!(check.feasible(), "{:?}", check.violations);
            prop_assert!((check.objective - target).abs() <= 1e-10);
        }
    }

    #[test]
    fn grid_search_never_beats_formula(dist in dist_strategy(5), l1 in 0.2f64..1.0, l2 in 1.0f64..4.0, delta in 0.0f64..=1.0) {
        let spec = OutcomeSpec::Recommended { delta };
        let params = SensitivityParams::new(l1, l2, spec).unwrap();
        let formula = arm_bounds(&params, &dist);
        let problem = OracleProblem::from_spec(dist, l1, l2, spec);
        let res = enumerate_emsm_bound(&problem, 40).unwrap();
        prop_assert!(res.upper <= formula.upper + 1e-9 && res.lower >= formula.lower - 1e-9);
        let slack = grid_slack(&problem, 40);
        prop_assert!(formula.upper - res.upper <= slack + 1e-8);
        prop_assert!(res.lower - formula.lower <= slack + 1e-8);
    }

    #[test]
    fn dv_families_are_ordered(p1 in 0.001f64..0.999, p0 in 0.001f64..0.999, pt in 0.05f64..0.95, l in 1.0f64..6.0, theta in 1.0f64..20.0) {
        let s = BinaryStratum::new(p1, p0, pt).unwrap();
        let params = DvParams::symmetric(theta, l).unwrap();
        let orig = dv_original_bounds(&s, &params).unwrap();
        let sjo = sjolander_bounds(&s, &params);
        let sharp = dv_sharp_bounds(&s, &params).bounds;
        for (a, b, c) in [(orig.mu1, sjo.mu1, sharp.mu1), (orig.mu0, sjo.mu0, sharp.mu0)] {
            prop_assert!(contains(a, b, 1e-12) && contains(b, c, 1e-12));
        }
    }

    #[test]
    fn rmsm_matches_sharp_dv(p1 in 0.0f64..=1.0, pt in 0.05f64..0.95, l1 in 0.05f64..1.0, l2 in 1.0f64..6.0, theta in 1.0f64..10.0) {
        let tau = if l1 == l2 { 0.5 } else { (l2 - 1.0) / (l2 - l1) };
        let nu = rmsm_bounds(l1, l2, theta, &ArmSummary::binary(p1, tau)).unwrap();
        let mu1 = Interval::new(p1 + (1.0 - pt) * (nu.lower - p1), p1 + (1.0 - pt) * (nu.upper - p1));
        let s = BinaryStratum::new(p1, 0.5, pt).unwrap();
        let sharp = dv_sharp_bounds(&s, &DvParams::new(theta, l1, l2).unwrap()).bounds.mu1;
        prop_assert!((mu1.lower - sharp.lower).abs() <= 1e-12 && (mu1.upper - sharp.upper).abs() <= 1e-12);
    }

    #[test]
    fn dmsm_matches_emsm_with_side_specific_shifts(dist in dist_strategy(8), l1 in 0.05f64..1.0, l2 in 1.0f64..6.0, big in 0.0f64..4.0) {
        let params = SensitivityParams::msm(l1, l2).unwrap();
        let tau = params.tau();
        let arm = ArmSummary::from_dist(&dist, tau);
        let a = dmsm_bounds(l1, l2, big, &arm);
        let up = SensitivityParams::new(l1, l2, OutcomeSpec::Explicit { delta1: (1.0 - tau) * big, delta2: tau * big }).unwrap();
        let lo = SensitivityParams::new(l1, l2, OutcomeSpec::Explicit { delta1: tau * big, delta2: (1.0 - tau) * big }).unwrap();
        prop_assert!((a.upper - emsm_arm_bounds(&up, &arm).upper).abs() <= 1e-12);
        prop_assert!((a.lower - emsm_arm_bounds(&lo, &arm).lower).abs() <= 1e-12);
    }

    #[test]
    fn theta_plus_grows_with_delta(tau in 0.5f64..0.99, d in 0.0f64..0.99, step in 0.0f64..0.5) {
        let (a, _) = theta_plus_minus(d, tau);
        let (b, _) = theta_plus_minus((d + step).min(1.0), tau);
        prop_assert!(a >= 1.0 && b >= a);
        let grid = theta_alignment_grid(d, tau);
        prop_assert_eq!(grid[1], Some(a));
        prop_assert_eq!(grid[0].is_some(), a >= 2.0);
    }

    #[test]
    fn aggregation_is_interval_arithmetic(
        w in prop::collection::vec(0.1f64..1.0, 1..6),
        pis in prop::collection::vec(0.05f64..0.95, 6),
        means in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..0.5, 0.0f64..0.5), 6),
    ) {
        let total: f64 = w.iter().sum();
        let strata: Vec<StratumBounds> = w.iter().enumerate().map(|(k, wk)| {
            let (m1, m0, a, b) = means[k];
            StratumBounds {
                weight: wk / total,
                propensity: pis[k],
                treated_mean: m1,
                control_mean: m0,
                nu1: Interval::new(m1 - a, m1 + b),
                nu0: Interval::new(m0 - b, m0 + a),
            }
        }).collect();
        let pop = aggregate_strata(&strata).unwrap();
        prop_assert!((pop.ate.lower - (pop.mu1.lower - pop.mu0.upper)).abs() < 1e-15);
        prop_assert!((pop.ate.upper - (pop.mu1.upper - pop.mu0.lower)).abs() < 1e-15);
        let point1: f64 = strata.iter().map(|s| s.weight * s.treated_mean).sum();
        prop_assert!(pop.mu1.lower <= point1 + 1e-12 && point1 <= pop.mu1.upper + 1e-12);
    }

    #[test]
    fn wald_intervals_nest(est_l in -2.0f64..2.0, width in 0.0f64..1.0, se_l in 0.0f64..1.0, se_u in 0.0f64..1.0, level in 0.5f64..0.99) {
        let lower = BoundEstimate { estimate: est_l, variance: se_l * se_l, se: se_l };
        let upper = BoundEstimate { estimate: est_l + width, variance: se_u * se_u, se: se_u };
        let (one, two) = wald_intervals(&lower, &upper, level).unwrap();
        let point = Interval::new(est_l, est_l + width);
        prop_assert!(contains(one, point, 1e-15) && contains(two, one, 1e-15));
        let (_, wider) = wald_intervals(&lower, &upper, (level + 0.5 * (1.0 - level)).min(0.999)).unwrap();
        prop_assert!(contains(wider, two, 1e-15));
    }

    #[test]
    fn percentile_is_monotone(mut v in prop::collection::vec(-10.0f64..10.0, 1..50), p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        v.sort_by(f64::total_cmp);
        let (a, b) = (percentile(&v, p.min(q)), percentile(&v, p.max(q)));
        prop_assert!(a <= b);
        prop_assert!(v[0] <= a && b <= v[v.len() - 1]);
    }

    #[test]
    fn resampling_is_keyed_and_in_range(n in 1usize..200, seed in any::<u64>(), r in 0u64..1000) {
        let a = resample_indices(n, seed, r);
        prop_assert_eq!(a.len(), n);
        prop_assert!(a.iter().all(|i| *i < n));
        prop_assert_eq!(&a, &resample_indices(n, seed, r));
    }

    #[test]
    fn csv_round_trip(rows in prop::collection::vec((-1e6f64..1e6, any::<bool>(), -1e3f64..1e3, -1e3f64..1e3), 1..30)) {
        let n = rows.len();
        let y: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let t: Vec<bool> = rows.iter().map(|r| r.1).collect();
        let xs: Vec<f64> = rows.iter().flat_map(|r| [r.2, r.3]).collect();
        let data = Dataset::new(y, t, DMatrix::from_row_slice(n, 2, &xs), vec!["a".into(), "b".into()]).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf, "y", "t").unwrap();
        let roles = ColumnRoles { outcome: "y".into(), treatment: "t".into(), covariates: None };
        let back = Dataset::from_csv_reader(buf.as_slice(), &roles).unwrap();
        prop_assert_eq!(back, data);
    }
}
