//! Acceptance harness: runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

use std::time::Instant;

use emsm_core::bounds::{
    emsm_arm_bounds, ArmSummary, DiscreteDist, Interval, OutcomeSpec, SensitivityParams,
    WorstCaseConstruction,
};
use emsm_core::dv::{
    dmsm_bounds, dv_original_bounds, dv_sharp_bounds, rmsm_bounds, sjolander_bounds,
    theta_from_delta, theta_plus_minus, BinaryStratum, BoundSide, DvParams,
};
use emsm_core::dv_sample::{dv_bootstrap_ci, BootstrapConfig, DvBootstrapResult};
use emsm_core::estimate::{
    fit_propensity, fit_side, phi_eval, wald_intervals, BoundEstimate, EstimationConfig,
    EstimationInput, PhiParams, Side, UnitValues,
};
use emsm_core::fit::{
    build_design, fit_cal_logistic, fit_lasso, fit_lasso_path_cv, fit_weighted_ls,
    fit_weighted_quantile, kappa_max, Arm, Design, DesignSpec, LassoConfig, LassoLoss, Terms,
};
use emsm_core::oracle::{
    duality_scan, enumerate_dv_bound, enumerate_emsm_bound, evaluate_construction, q_grid,
    random_discrete_dist, LatentConstruction, OracleProblem,
};
use emsm_core::synthetic::{
    dv_population_bounds, generate_synthetic, population_truth, DvKind, LinearIndex,
    OutcomeModel, Pairwise, SyntheticDgp,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_lambdas(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let l1 = match rng.random_range(0..6) {
        0 => 1.0,
        _ => rng.random_range(0.05..1.0),
    };
    let l2 = match rng.random_range(0..6) {
        0 => 1.0,
        _ => rng.random_range(1.0..6.0),
    };
    (l1, l2)
}

fn random_spec(rng: &mut ChaCha8Rng) -> OutcomeSpec {
    match rng.random_range(0..3) {
        0 => OutcomeSpec::Unrestricted,
        1 => OutcomeSpec::Explicit {
            delta1: rng.random_range(0.0..3.0),
            delta2: rng.random_range(0.0..3.0),
        },
        _ => OutcomeSpec::Recommended {
            delta: if rng.random_bool(0.1) { 1.0 } else { rng.random_range(0.0..1.0) },
        },
    }
}

fn theta_table() -> Outcome {
    let start = Instant::now();
    let lambdas = [1.0, 1.2, 1.5, 2.0];
    let rows: [(f64, [f64; 4]); 4] = [
        (0.2, [1.5, 1.55, 1.625, 1.75]),
        (0.5, [3.0, 3.2, 3.5, 4.0]),
        (0.8, [9.0, 9.8, 11.0, 13.0]),
        (1.0, [f64::INFINITY; 4]),
    ];
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for (delta, expected) in rows {
        for (lambda, want) in lambdas.iter().zip(expected) {
            let tau = lambda / (1.0 + lambda);
            let got = theta_plus_minus(delta, tau).0;
            if want.is_infinite() {
                if got != f64::INFINITY {
                    bad.push(format!("delta={delta} lambda={lambda}: {got}"));
                }
            } else {
                let err = (got - want).abs();
                worst = worst.max(err);
                if err > 4.0 * f64::EPSILON * want {
                    bad.push(format!("delta={delta} lambda={lambda}: {got} vs {want}"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        bad.is_empty() && secs < 1.0,
        format!("16 cells, max abs error {worst:.1e}, {secs:.3}s {}", bad.join("; ")),
    )
}

fn specification_collapse() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let dist = random_discrete_dist(&mut rng, 10);
        let (l1, l2) = random_lambdas(&mut rng);
        let msm = SensitivityParams::msm(l1, l2).unwrap();
        let arm = ArmSummary::from_dist(&dist, msm.tau());
        let b_msm = emsm_arm_bounds(&msm, &arm);
        let one = SensitivityParams::new(l1, l2, OutcomeSpec::Recommended { delta: 1.0 }).unwrap();
        let zero = SensitivityParams::new(l1, l2, OutcomeSpec::Recommended { delta: 0.0 }).unwrap();
        let b1 = emsm_arm_bounds(&one, &arm);
        let b0 = emsm_arm_bounds(&zero, &arm);
        let m = dist.mean();
        for e in [
            b1.upper - b_msm.upper,
            b1.lower - b_msm.lower,
            b0.upper - m,
            b0.lower - m,
        ] {
            worst = worst.max(e.abs());
        }
    }
    outcome(worst <= 1e-12, format!("1000 draws, max deviation {worst:.1e}"))
}

fn to_latent(c: &WorstCaseConstruction) -> LatentConstruction {
    LatentConstruction {
        laws: c.laws.clone(),
        prob_u1: c.prob_u1,
        lambda: c.lambda,
    }
}

fn sharpness_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let resolution = 200;
    let mut failures = Vec::new();
    let mut worst_gap_ratio: f64 = 0.0;
    let mut worst_attain: f64 = 0.0;
    let mut worst_violation: f64 = 0.0;
    for i in 0..500 {
        let dist = random_discrete_dist(&mut rng, 10);
        let (l1, l2) = random_lambdas(&mut rng);
        let spec = random_spec(&mut rng);
        let params = SensitivityParams::new(l1, l2, spec).unwrap();
        let formula = emsm_arm_bounds(&params, &ArmSummary::from_dist(&dist, params.tau()));
        let problem = OracleProblem::from_spec(dist.clone(), l1, l2, spec);
        let res = match enumerate_emsm_bound(&problem, resolution) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("#{i}: {e}"));
                continue;
            }
        };
        let tol = 1e-8;
        let up_gap = formula.upper - res.upper;
        let lo_gap = res.lower - formula.lower;
        if up_gap < -tol || lo_gap < -tol || up_gap > res.slack + tol || lo_gap > res.slack + tol {
            failures.push(format!(
                "#{i}: formula [{}, {}] oracle [{}, {}] slack {}",
                formula.lower, formula.upper, res.lower, res.upper, res.slack
            ));
        }
        if res.slack > 0.0 {
            worst_gap_ratio = worst_gap_ratio.max(up_gap.max(lo_gap) / res.slack);
        }
        for (c, target) in [
            (WorstCaseConstruction::upper(&params, &dist), formula.upper),
            (WorstCaseConstruction::lower(&params, &dist), formula.lower),
        ] {
            let check = evaluate_construction(&problem, &to_latent(&c), 1e-10);
            worst_attain = worst_attain.max((check.objective - target).abs());
            worst_violation = worst_violation.max(check.max_violation);
            if !check.feasible() || (check.objective - target).abs() > 1e-10 {
                failures.push(format!(
                    "#{i}: construction {} vs {target}, {:?}",
                    check.objective, check.violations
                ));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 60.0;
    outcome(
        pass,
        format!(
            "500 instances, max gap/slack {worst_gap_ratio:.3}, attainment error {worst_attain:.1e}, \
             max violation {worst_violation:.1e}, {secs:.1}s {}",
            failures.iter().take(3).cloned().collect::<Vec<_>>().join("; ")
        ),
    )
}

/// Fine grid with a smooth random density plus a few atoms.
fn mixed_dist(rng: &mut ChaCha8Rng) -> DiscreteDist {
    let mut support = Vec::new();
    let mut weights = Vec::new();
    let family = rng.random_range(0..3);
    if family != 0 {
        let m = rng.random_range(50..300);
        let (lo, hi) = (rng.random_range(-5.0..0.0), rng.random_range(0.5..5.0));
        let mode = rng.random_range(lo..hi);
        let width = rng.random_range(0.1..3.0);
        let skew = rng.random_range(-2.0..2.0);
        for j in 0..m {
            let y = lo + (hi - lo) * j as f64 / (m - 1) as f64;
            let z = (y - mode) / width;
            let dens = (-0.5 * z * z).exp() * (1.0 + (skew * z).tanh());
            support.push(y);
            weights.push(dens.max(0.0) + 1e-9);
        }
        let grid_mass: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= grid_mass;
        }
    }
    if family != 1 {
        let atoms = rng.random_range(1..6);
        let share = if family == 0 { 1.0 } else { rng.random_range(0.05..0.9) };
        for w in weights.iter_mut() {
            *w *= 1.0 - share;
        }
        let raw: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        for r in raw {
            let mut y = (rng.random_range(-12.0..12.0_f64) * 4.0).round() / 4.0;
            while support.contains(&y) {
                y += 0.013;
            }
            support.push(y);
            weights.push(share * r / total);
        }
    }
    let mut pairs: Vec<(f64, f64)> = support.into_iter().zip(weights).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    DiscreteDist::new(
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1 / total).collect(),
    )
    .unwrap()
}

fn quantile_loss_inequality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    let mut first = String::new();
    for i in 0..10_000 {
        let dist = mixed_dist(&mut rng);
        let tau = match i % 10 {
            0 => 0.5,
            1 => rng.random_range(0.99..0.9999),
            _ => rng.random_range(0.5..1.0),
        };
        let a = dist.quantile_loss(1.0 - tau);
        let b = dist.quantile_loss(tau);
        let ratio = if a == 0.0 && b == 0.0 { 1.0 } else { a / b };
        let lo = (1.0 - tau) / tau;
        let hi = tau / (1.0 - tau);
        let slack = 1e-12 * hi;
        if !(ratio >= lo - slack && ratio <= hi + slack) {
            violations += 1;
            if first.is_empty() {
                first = format!(" first: tau={tau} ratio={ratio} range=[{lo}, {hi}]");
            }
        }
    }
    outcome(violations == 0, format!("10000 distributions, {violations} violations{first}"))
}

fn dv_ordering() -> Outcome {
    let p1s: Vec<f64> = (0..20).map(|i| 0.025 + 0.05 * i as f64).collect();
    let lambdas = [1.0, 1.25, 1.5, 2.0, 3.0, 5.0];
    let thetas = [1.0, 1.3, 2.0, 3.0, 10.0, f64::INFINITY];
    let prob_t1 = 0.4;
    let eps = 1e-12;
    let mut order_fail = 0;
    let mut limit_err: f64 = 0.0;
    let mut oracle_fail = 0;
    let mut cases = 0;
    for &p1 in &p1s {
        let p0 = 1.0 - p1;
        let s = BinaryStratum::new(p1, p0, prob_t1).unwrap();
        for &lambda in &lambdas {
            for &theta in &thetas {
                cases += 1;
                let params = DvParams::symmetric(theta, lambda).unwrap();
                let orig = dv_original_bounds(&s, &params).unwrap();
                let sjo = sjolander_bounds(&s, &params);
                let sharp = dv_sharp_bounds(&s, &params).bounds;
                for (sh, sj, or) in [(sharp.mu1, sjo.mu1, orig.mu1), (sharp.mu0, sjo.mu0, orig.mu0)] {
                    let ok = sh.upper <= sj.upper + eps
                        && sj.upper <= or.upper + eps
                        && sh.lower >= sj.lower - eps
                        && sj.lower >= or.lower - eps;
                    if !ok {
                        order_fail += 1;
                    }
                }
                for l1 in [0.0, 1e-13] {
                    let p = DvParams::new(theta, l1, lambda).unwrap();
                    let a = dv_sharp_bounds(&s, &p).bounds.mu1.upper;
                    let b = sjolander_bounds(&s, &p).mu1.upper;
                    limit_err = limit_err.max((a - b).abs());
                }
                let o = enumerate_dv_bound(p1, 1.0 - prob_t1, params.lambda1, params.lambda2, theta, 400);
                let up = sharp.mu1.upper - o.upper;
                let lo = o.lower - sharp.mu1.lower;
                if up < -1e-12 || lo < -1e-12 || up > o.slack + 1e-12 || lo > o.slack + 1e-12 {
                    oracle_fail += 1;
                }
            }
        }
    }
    outcome(
        order_fail == 0 && limit_err <= 1e-10 && oracle_fail == 0,
        format!(
            "{cases} grid points, {order_fail} ordering failures, limit error {limit_err:.1e}, \
             {oracle_fail} oracle mismatches"
        ),
    )
}

fn equivalences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut dmsm_err: f64 = 0.0;
    let mut rmsm_err: f64 = 0.0;
    let mut theta_err: f64 = 0.0;
    let mut theta_checked = 0;
    for _ in 0..2000 {
        let dist = random_discrete_dist(&mut rng, 8);
        let (l1, l2) = random_lambdas(&mut rng);
        let big_delta = rng.random_range(0.0..4.0);
        let params = SensitivityParams::msm(l1, l2).unwrap();
        let tau = params.tau();
        let arm = ArmSummary::from_dist(&dist, tau);
        let explicit = |d1: f64, d2: f64| {
            SensitivityParams::new(l1, l2, OutcomeSpec::Explicit { delta1: d1, delta2: d2 }).unwrap()
        };
        let a = dmsm_bounds(l1, l2, big_delta, &arm);
        let up = emsm_arm_bounds(&explicit((1.0 - tau) * big_delta, tau * big_delta), &arm).upper;
        let lo = emsm_arm_bounds(&explicit(tau * big_delta, (1.0 - tau) * big_delta), &arm).lower;
        dmsm_err = dmsm_err.max((a.upper - up).abs()).max((a.lower - lo).abs());

        let p1: f64 = rng.random_range(0.0..1.0);
        let prob_t1: f64 = rng.random_range(0.05..0.95);
        let theta = if rng.random_bool(0.1) { f64::INFINITY } else { rng.random_range(1.0..8.0) };
        let nu = rmsm_bounds(l1, l2, theta, &ArmSummary::binary(p1, tau)).unwrap();
        let mu1 = Interval::new(p1 + (1.0 - prob_t1) * (nu.lower - p1), p1 + (1.0 - prob_t1) * (nu.upper - p1));
        let s = BinaryStratum::new(p1, 0.5, prob_t1).unwrap();
        let sharp = dv_sharp_bounds(&s, &DvParams::new(theta, l1, l2).unwrap()).bounds.mu1;
        rmsm_err = rmsm_err.max((mu1.lower - sharp.lower).abs()).max((mu1.upper - sharp.upper).abs());

        let delta: f64 = rng.random_range(0.0..1.0);
        let tp: f64 = rng.random_range(0.01..0.99);
        let p = rng.random_range(0.0..tp.min(1.0 - tp));
        let t = theta_from_delta(delta, tp, p, BoundSide::Upper);
        let plus = theta_plus_minus(delta, tp).0;
        // Relative error scaled by the condition number 1/(1 - delta) of the map.
        theta_err = theta_err.max((t - plus).abs() / plus * (1.0 - delta));
        theta_checked += 1;
    }
    outcome(
        dmsm_err <= 1e-12 && rmsm_err <= 1e-12 && theta_err <= 1e-12,
        format!(
            "2000 draws, dMSM error {dmsm_err:.1e}, rMSM error {rmsm_err:.1e}, \
             theta alignment scaled error {theta_err:.1e} over {theta_checked}"
        ),
    )
}

fn enumerable_dgp() -> SyntheticDgp {
    SyntheticDgp {
        n: 1,
        covariate_probs: vec![0.45, 0.3, 0.6],
        propensity: LinearIndex {
            intercept: -0.2,
            main: vec![0.6, -0.5, 0.4],
            pairwise: vec![Pairwise { a: 0, b: 2, coef: 0.7 }],
        },
        outcome: OutcomeModel::Shifted {
            treated: LinearIndex {
                intercept: 1.0,
                main: vec![0.8, -0.4, 0.3],
                pairwise: vec![Pairwise { a: 1, b: 2, coef: 0.9 }],
            },
            control: LinearIndex {
                intercept: 0.3,
                main: vec![0.2, 0.5, -0.1],
                pairwise: vec![],
            },
            noise_support: vec![-1.5, -0.5, 0.0, 0.7, 2.5],
            noise_probs: vec![0.15, 0.25, 0.2, 0.3, 0.1],
            scale: 1.3,
        },
        lambda1: 0.5,
        lambda2: 2.0,
        delta: 0.6,
    }
}

fn check_loss_value(tau: f64, y: f64, q: f64) -> f64 {
    let r = y - q;
    tau * r.max(0.0) + (1.0 - tau) * (-r).max(0.0)
}

fn exact_double_robustness() -> Outcome {
    let dgp = enumerable_dgp();
    let params = dgp.params().unwrap();
    let p = PhiParams::for_arm(&params, Arm::Treated).unwrap();
    let strata = dgp.strata().unwrap();
    let truth = population_truth(&dgp).unwrap();
    let tau = params.tau();
    let mut worst: f64 = 0.0;
    let mut sharp_err: f64 = 0.0;
    for side in [Side::Upper, Side::Lower] {
        let level = p.level(side);
        let sign = if side == Side::Upper { 1.0 } else { -1.0 };
        for q_kind in 0..2 {
            let q_of = |x: &[f64], d: &DiscreteDist| -> f64 {
                if q_kind == 0 {
                    d.left_quantile(level)
                } else {
                    0.4 + 0.7 * x[0] - 0.3 * x[1] * x[2]
                }
            };
            let mut target = 0.0;
            let mut by_case = [0.0; 2];
            for s in &strata {
                let q = q_of(&s.x, &s.treated);
                let (ys, ps) = (s.treated.support(), s.treated.probs());
                let mean: f64 = ys.iter().zip(ps).map(|(y, w)| y * w).sum();
                let eloss: f64 = ys.iter().zip(ps).map(|(y, w)| w * check_loss_value(level, *y, q)).sum();
                let m_true = mean + sign * p.gap * p.delta * eloss;
                let pi = s.propensity;
                target += s.weight * (pi * mean + (1.0 - pi) * m_true);
                let wrong_pi = (pi * 0.6 + 0.3).clamp(0.05, 0.95);
                let wrong_m = 2.0 - 1.5 * s.x[1] + 0.8 * s.x[0] * s.x[2];
                for (case, (pi_w, m_w)) in [(pi, wrong_m), (wrong_pi, m_true)].into_iter().enumerate() {
                    let treated: f64 = ys
                        .iter()
                        .zip(ps)
                        .map(|(y, w)| {
                            let u = UnitValues { t: true, y: *y, pi: pi_w, q, m: m_w };
                            w * phi_eval(side, Arm::Treated, &u, &p).unwrap()
                        })
                        .sum();
                    let u0 = UnitValues { t: false, y: 0.0, pi: pi_w, q, m: m_w };
                    let control = phi_eval(side, Arm::Treated, &u0, &p).unwrap();
                    by_case[case] += s.weight * (pi * treated + (1.0 - pi) * control);
                }
            }
            for v in by_case {
                worst = worst.max((v - target).abs());
            }
            if q_kind == 0 {
                let sharp = match side {
                    Side::Upper => truth.bounds.mu1.upper,
                    Side::Lower => truth.bounds.mu1.lower,
                };
                sharp_err = sharp_err.max((target - sharp).abs());
                for v in by_case {
                    sharp_err = sharp_err.max((v - sharp).abs());
                }
            }
        }
    }
    outcome(
        worst <= 1e-10 && sharp_err <= 1e-10,
        format!(
            "8 strata, tau={tau:.3}, max |E phi - target| {worst:.1e}, max |target(q*) - sharp| {sharp_err:.1e}"
        ),
    )
}

fn mc_dgp(interaction_in_propensity: bool) -> SyntheticDgp {
    let inter = |c: f64| vec![Pairwise { a: 0, b: 1, coef: c }];
    SyntheticDgp {
        n: 5000,
        covariate_probs: vec![0.5, 0.4],
        propensity: LinearIndex {
            intercept: -0.1,
            main: vec![0.5, -0.6],
            pairwise: if interaction_in_propensity { inter(1.4) } else { vec![] },
        },
        outcome: OutcomeModel::Shifted {
            treated: LinearIndex {
                intercept: 1.0,
                main: vec![0.6, -0.5],
                pairwise: if interaction_in_propensity { vec![] } else { inter(1.5) },
            },
            control: LinearIndex {
                intercept: 0.5,
                main: vec![0.3, 0.4],
                pairwise: vec![],
            },
            noise_support: vec![-1.0, 0.0, 0.5, 2.0],
            noise_probs: vec![0.2, 0.3, 0.3, 0.2],
            scale: 1.0,
        },
        lambda1: 0.5,
        lambda2: 2.0,
        delta: 0.5,
    }
}

struct Mu1Fit {
    lower: BoundEstimate,
    upper: BoundEstimate,
}

fn fit_mu1(dgp: &SyntheticDgp, seed: u64) -> Mu1Fit {
    let draw = generate_synthetic(dgp, seed).unwrap();
    let d = &draw.data;
    let f = build_design(&d.x, &d.names, &DesignSpec::default()).unwrap();
    let h_spec = DesignSpec {
        terms: Terms::MainPlusInteractions,
        ..DesignSpec::default()
    };
    let h = build_design(&d.x, &d.names, &h_spec).unwrap();
    let input = EstimationInput { y: &d.y, t: &d.t, f: &f, h: &h };
    let config = EstimationConfig::default();
    let params = dgp.params().unwrap();
    let p = PhiParams::for_arm(&params, Arm::Treated).unwrap();
    let prop = fit_propensity(&input, Arm::Treated, &config).unwrap();
    let up = fit_side(&input, &prop, Side::Upper, &p, &config).unwrap();
    let lo = fit_side(&input, &prop, Side::Lower, &p, &config).unwrap();
    Mu1Fit {
        lower: BoundEstimate::from_phi(&lo.phi).unwrap(),
        upper: BoundEstimate::from_phi(&up.phi).unwrap(),
    }
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn monte_carlo_robustness() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    let mut coverage = (0, 0);
    for (name, interaction_in_propensity, reps) in [("propensity wrong", true, 500), ("outcome wrong", false, 200)] {
        let dgp = mc_dgp(interaction_in_propensity);
        let truth = population_truth(&dgp).unwrap();
        let target = truth.bounds.mu1;
        let mut ests = Vec::with_capacity(reps);
        for r in 0..reps {
            let fit = fit_mu1(&dgp, 1000 + r as u64);
            if r < 200 {
                ests.push(fit.upper.estimate);
            }
            if interaction_in_propensity {
                let (_, two) = wald_intervals(&fit.lower, &fit.upper, 0.9).unwrap();
                coverage.1 += 1;
                if two.lower <= target.lower && two.upper >= target.upper {
                    coverage.0 += 1;
                }
            }
        }
        let (m, se) = mean_and_se(&ests);
        let bias = m - target.upper;
        let ok = bias.abs() < 2.0 * se;
        pass &= ok;
        parts.push(format!("{name}: bias {bias:+.4} (MC SE {se:.4}, truth {:.4})", target.upper));
    }
    let rate = coverage.0 as f64 / coverage.1 as f64;
    let cov_ok = (0.86..=0.94).contains(&rate);
    pass &= cov_ok;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        pass,
        format!(
            "n=5000, {}; two-sided 90% coverage {}/{} = {:.1}%, {secs:.0}s",
            parts.join("; "),
            coverage.0,
            coverage.1,
            100.0 * rate
        ),
    )
}

fn rcal_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 400;
    let p = 5;
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 1..p {
            x[(i, j)] = rng.random_range(-1.5..1.5);
        }
    }
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let e: f64 = 0.2 + 0.6 * x[(i, 1)] - 0.4 * x[(i, 2)];
        t.push(rng.random::<f64>() < 1.0 / (1.0 + (-e).exp()));
        y.push(1.0 + x[(i, 1)] - 0.5 * x[(i, 3)] + rng.random_range(-1.0..1.0_f64) * (1.0 + 0.5 * x[(i, 2)].abs()));
    }
    let names: Vec<String> = (0..p).map(|j| format!("c{j}")).collect();
    let design = Design::from_matrix(x.clone(), names).unwrap();
    let config = LassoConfig::default();
    let w: Vec<f64> = (0..n).map(|i| if t[i] { 0.5 + x[(i, 1)].abs() } else { 0.0 }).collect();

    let mut match_err: f64 = 0.0;
    let cal = fit_cal_logistic(&design, &t, Arm::Treated).unwrap();
    let loss_cal = LassoLoss::CalLogistic { t: t.clone(), arm: Arm::Treated };
    let r = fit_lasso(&loss_cal, &x, 0.0, None, &config).unwrap();
    match_err = match_err.max((&r.coef - &cal.coef).amax());

    let cal0 = fit_cal_logistic(&design, &t, Arm::Control).unwrap();
    let loss_cal0 = LassoLoss::CalLogistic { t: t.clone(), arm: Arm::Control };
    let r = fit_lasso(&loss_cal0, &x, 0.0, None, &config).unwrap();
    match_err = match_err.max((&r.coef - &cal0.coef).amax());

    let wls = fit_weighted_ls(&design, &y, &w).unwrap();
    let loss_ls = LassoLoss::WeightedLs { z: y.clone(), w: w.clone() };
    let r = fit_lasso(&loss_ls, &x, 0.0, None, &config).unwrap();
    match_err = match_err.max((&r.coef - &wls.coef).amax());

    let wq = fit_weighted_quantile(&x, &y, &w, 0.7).unwrap();
    let loss_wq = LassoLoss::WeightedQuantile { y: y.clone(), w: w.clone(), tau: 0.7 };
    let r = fit_lasso(&loss_wq, &x, 0.0, None, &config).unwrap();
    match_err = match_err.max((&r.coef - &wq.coef).amax());

    let mut kkt: f64 = 0.0;
    let mut zero_fail = 0;
    for loss in [&loss_cal, &loss_cal0, &loss_ls, &loss_wq] {
        let path = fit_lasso_path_cv(loss, &x, &config).unwrap();
        for f in &path.fits {
            kkt = kkt.max(f.kkt_residual);
        }
        let kmax = kappa_max(loss, &x, &config).unwrap();
        for factor in [1.0, 1.5, 4.0] {
            let f = fit_lasso(loss, &x, kmax * factor, None, &config).unwrap();
            kkt = kkt.max(f.kkt_residual);
            if f.coef.iter().skip(1).any(|c| *c != 0.0) {
                zero_fail += 1;
            }
        }
    }
    outcome(
        match_err <= 1e-6 && kkt <= 1e-6 && zero_fail == 0,
        format!(
            "max |RCAL(0) - CAL| {match_err:.1e}, max KKT residual {kkt:.1e}, \
             {zero_fail} nonzero fits at kappa >= kappa*"
        ),
    )
}

fn dv_dgp(n: usize) -> SyntheticDgp {
    SyntheticDgp {
        n,
        covariate_probs: vec![0.5, 0.4],
        propensity: LinearIndex {
            intercept: 0.1,
            main: vec![0.6, -0.5],
            pairwise: vec![Pairwise { a: 0, b: 1, coef: 0.4 }],
        },
        outcome: OutcomeModel::Binary {
            treated: LinearIndex {
                intercept: -0.2,
                main: vec![0.7, -0.3],
                pairwise: vec![Pairwise { a: 0, b: 1, coef: -0.5 }],
            },
            control: LinearIndex {
                intercept: -0.6,
                main: vec![0.4, 0.3],
                pairwise: vec![Pairwise { a: 0, b: 1, coef: 0.3 }],
            },
        },
        lambda1: 0.5,
        lambda2: 2.0,
        delta: 0.5,
    }
}

fn saturated_design(d: &emsm_core::data::Dataset) -> Design {
    let spec = DesignSpec {
        terms: Terms::MainPlusInteractions,
        standardize: false,
        sparsity_min_count: 0,
    };
    build_design(&d.x, &d.names, &spec).unwrap()
}

fn bits(r: &DvBootstrapResult) -> Vec<u64> {
    [r.mu1, r.mu0, r.ate]
        .iter()
        .flat_map(|b| [b.point.lower, b.point.upper, b.ci.lower, b.ci.upper, b.se_lower, b.se_upper])
        .chain(r.crr.iter().flat_map(|b| [b.ci.lower, b.ci.upper]))
        .map(f64::to_bits)
        .collect()
}

fn dv_bootstrap() -> Outcome {
    let params = DvParams::symmetric(2.0, 1.5).unwrap();
    let draw = generate_synthetic(&dv_dgp(2000), 77).unwrap();
    let design = saturated_design(&draw.data);
    let config = BootstrapConfig {
        replicates: 1000,
        seed: 5,
        level: 0.9,
    };
    let start = Instant::now();
    let a = dv_bootstrap_ci(&design, &draw.data.y, &draw.data.t, &params, DvKind::Original, &config).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let b = dv_bootstrap_ci(&design, &draw.data.y, &draw.data.t, &params, DvKind::Original, &config).unwrap();
    let identical = bits(&a) == bits(&b);

    let dgp = dv_dgp(1000);
    let target = dv_population_bounds(&dgp, &params, DvKind::Original).unwrap().ate;
    let cov_config = BootstrapConfig {
        replicates: 200,
        seed: 11,
        level: 0.9,
    };
    let reps = 300;
    let mut covered = 0;
    let cov_start = Instant::now();
    for r in 0..reps {
        let d = generate_synthetic(&dgp, 5000 + r).unwrap();
        let des = saturated_design(&d.data);
        let res = dv_bootstrap_ci(&des, &d.data.y, &d.data.t, &params, DvKind::Original, &cov_config).unwrap();
        if res.ate.ci.lower <= target.lower && res.ate.ci.upper >= target.upper {
            covered += 1;
        }
    }
    let cov_secs = cov_start.elapsed().as_secs_f64();
    let rate = covered as f64 / reps as f64;
    outcome(
        identical && secs < 30.0 && rate >= 0.86,
        format!(
            "bit-identical {identical}, B=1000 n=2000 in {secs:.1}s, ATE coverage {covered}/{reps} = {:.1}% \
             (B=200, n=1000, {cov_secs:.0}s)",
            100.0 * rate
        ),
    )
}

fn duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut missing = 0;
    let mut off = 0;
    for _ in 0..200 {
        let dist = random_discrete_dist(&mut rng, 10);
        let (l1, l2) = random_lambdas(&mut rng);
        let params = SensitivityParams::new(l1, l2, random_spec(&mut rng)).unwrap();
        let grid = q_grid(&dist, 25);
        let scan = duality_scan(&params, &dist, &grid);
        let slack = 1e-12 * (1.0 + scan.sharp_bound.abs());
        let err = (scan.min_value - scan.sharp_bound).abs();
        worst = worst.max(err);
        if err > slack {
            off += 1;
        }
        if !scan.q_star_in_argmin {
            missing += 1;
        }
    }
    outcome(
        off == 0 && missing == 0,
        format!("200 instances, max |min - sharp| {worst:.1e}, q* outside argmin {missing} times"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("theta-plus table", theta_table),
        ("specification collapses", specification_collapse),
        ("sharpness oracle", sharpness_oracle),
        ("quantile-loss ratio inequality", quantile_loss_inequality),
        ("DV ordering and limits", dv_ordering),
        ("dMSM / rMSM / alignment equivalences", equivalences),
        ("exact double robustness", exact_double_robustness),
        ("Monte Carlo robustness and coverage", monte_carlo_robustness),
        ("RCAL consistency", rcal_consistency),
        ("DV bootstrap", dv_bootstrap),
        ("duality scan", duality),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{tag}] {:>2}. {name}: {} ({:.1}s)",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
