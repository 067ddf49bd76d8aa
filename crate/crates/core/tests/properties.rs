mod common;

use descentlab::certificates::{
    certify_deterministic, certify_stochastic_enumerated, evaluate_bound, BoundInputs, RateBound, Scheme,
};
use descentlab::estimators::{
    enumerate_conditional_mean, enumerate_moments, run_unified_sgd, EstimatorKind, EstimatorState,
    SgdDriverSpec,
};
use descentlab::methods::{run_deterministic, run_dual_averaging, GammaRule, MethodKind, MethodSpec, ThetaRule, ThetaSequence};
use descentlab::problems::{fixtures, Problem, ProblemKind};
use descentlab::prox::{ProxKind, ScalarFunction};
use descentlab::schedules::{barzilai_borwein, ScheduleSpec, StepPolicy};
use descentlab::{DenseMatrix, Weights};
use proptest::prelude::*;

use common::*;

fn vec_strategy(p: usize) -> impl Strategy<Value = Weights> {
    prop::collection::vec(-3.0f64..3.0, p).prop_map(Weights::new)
}

fn logistic(seed: u64, p: usize, n: usize) -> Problem {
    let mut r = rng(seed);
    let x = random_matrix(&mut r, p, n);
    let y = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    Problem::new(ProblemKind::Logistic { x, y }).unwrap()
}

fn least_squares(seed: u64, p: usize, n: usize) -> Problem {
    let mut r = rng(seed);
    let x = random_matrix(&mut r, p, n);
    let y = random_vec(&mut r, n, 1.0).into_vec();
    Problem::new(ProblemKind::LeastSquares { x, y }).unwrap()
}

fn smooth_problems(seed: u64) -> Vec<Problem> {
    vec![
        random_quadratic(seed, 4, 0.1),
        least_squares(seed, 4, 6),
        logistic(seed, 4, 6),
        random_finite_sum(seed, 3, 4, 1.0),
    ]
}

fn gd(problem: &Problem, w0: &Weights, horizon: usize, spec: ScheduleSpec) -> descentlab::record::RunRecord {
    let mut policy = StepPolicy::new(spec).unwrap();
    run_deterministic(problem, &MethodSpec::new(MethodKind::Gd), &mut policy, w0, horizon).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradient_matches_central_differences(seed in 0u64..1000, w in vec_strategy(4)) {
        for problem in smooth_problems(seed) {
            let g = problem.grad(&w).unwrap();
            let h = 1e-5;
            for i in 0..4 {
                let mut plus = w.clone();
                plus[i] += h;
                let mut minus = w.clone();
                minus[i] -= h;
                let fd = (problem.value(&plus).unwrap() - problem.value(&minus).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + g[i].abs()), "coord {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn smoothness_and_convexity_inequalities(seed in 0u64..1000, x in vec_strategy(4), y in vec_strategy(4)) {
        for problem in smooth_problems(seed) {
            let c = problem.constants();
            let fx = problem.value(&x).unwrap();
            let fy = problem.value(&y).unwrap();
            let gx = problem.grad(&x).unwrap();
            let linear = fx + gx.dot(&y.sub(&x));
            let tol = 1e-9 * (1.0 + fx.abs() + fy.abs());
            prop_assert!(fy <= linear + 0.5 * c.l * x.dist_sq(&y) + tol);
            prop_assert!(fy >= linear + 0.5 * c.mu * x.dist_sq(&y) - tol);
            let gy = problem.grad(&y).unwrap();
            prop_assert!(gx.dist_sq(&gy).sqrt() <= c.l * x.dist_sq(&y).sqrt() * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn finite_sum_gradient_is_component_mean(seed in 0u64..1000, w in vec_strategy(4)) {
        let problem = random_finite_sum(seed, 5, 4, 1.0);
        let mut mean = Weights::zeros(4);
        for i in 0..5 {
            mean.axpy(0.2, &problem.component_grad(i, &w).unwrap());
        }
        prop_assert!(max_abs_diff(&mean, &problem.grad(&w).unwrap()) <= 1e-12);
    }

    #[test]
    fn prox_is_firmly_nonexpansive(x in vec_strategy(4), y in vec_strategy(4), gamma in 0.05f64..3.0) {
        let kinds = [
            ProxKind::L1 { lambda: 0.4 },
            ProxKind::SqL2 { lambda: 1.5 },
            ProxKind::L2Ball { radius: 1.2 },
            ProxKind::GroupL2 { blocks: vec![vec![0, 2], vec![1, 3]], lambda: 0.6 },
            ProxKind::ScalarSeparable { function: ScalarFunction::Huber { delta: 0.5, weight: 1.0 } },
            ProxKind::ScalarSeparable { function: ScalarFunction::Quartic { weight: 1.0 } },
        ];
        for kind in &kinds {
            let px = kind.apply(gamma, &x).unwrap();
            let py = kind.apply(gamma, &y).unwrap();
            let lhs = px.dist_sq(&py);
            let rhs = px.sub(&py).dot(&x.sub(&y));
            prop_assert!(lhs <= rhs + 1e-9, "{}: {lhs} > {rhs}", kind.name());
        }
    }

    #[test]
    fn moreau_route_agrees(w in vec_strategy(4), gamma in 0.05f64..3.0, lambda in 0.01f64..2.0) {
        for kind in [
            ProxKind::L1 { lambda },
            ProxKind::SqL2 { lambda },
            ProxKind::GroupL2 { blocks: vec![vec![0, 1, 2], vec![3]], lambda },
        ] {
            let direct = kind.apply(gamma, &w).unwrap();
            let dual = kind.apply_via_moreau(gamma, &w).unwrap();
            prop_assert!(max_abs_diff(&direct, &dual) <= 1e-10);
        }
    }

    #[test]
    fn scalar_prox_solves_optimality_equation(w in vec_strategy(4), gamma in 0.05f64..3.0) {
        for function in [
            ScalarFunction::Huber { delta: 0.7, weight: 2.0 },
            ScalarFunction::LogCosh { weight: 1.5 },
            ScalarFunction::Quartic { weight: 0.5 },
        ] {
            let kind = ProxKind::ScalarSeparable { function: function.clone() };
            let z = kind.apply(gamma, &w).unwrap();
            for i in 0..4 {
                let residual = z[i] - w[i] + gamma * function.derivative(z[i]);
                prop_assert!(residual.abs() <= 1e-9, "residual {residual}");
            }
        }
    }

    #[test]
    fn bb_step_within_inverse_spectrum(seed in 0u64..1000, a in vec_strategy(3), b in vec_strategy(3)) {
        let mut r = rng(seed);
        let eigs = [0.2, 1.0, 5.0];
        let q = spd_with_spectrum(&mut r, &eigs);
        prop_assume!(a.dist_sq(&b) > 1e-6);
        let step = barzilai_borwein(&a, &q.matvec(&a), &b, &q.matvec(&b)).unwrap();
        prop_assert!(step >= 1.0 / 5.0 - 1e-12 && step <= 1.0 / 0.2 + 1e-12);
    }

    #[test]
    fn exact_line_search_beats_probes(seed in 0u64..1000, w in vec_strategy(4)) {
        let problem = random_quadratic(seed, 4, 0.1);
        let g = problem.grad(&w).unwrap();
        prop_assume!(g.norm_sq() > 1e-8);
        let mut policy = StepPolicy::new(ScheduleSpec::ExactQuadratic).unwrap();
        let eta = policy.next_step(0, &w, &g, &problem).unwrap();
        let best = problem.value(&w.add_scaled(-eta, &g)).unwrap();
        for k in 0..50 {
            let probe = eta * k as f64 / 25.0;
            prop_assert!(best <= problem.value(&w.add_scaled(-probe, &g)).unwrap() + 1e-10);
        }
    }

    #[test]
    fn adaptive_steps_are_nonincreasing(seed in 0u64..1000, w in vec_strategy(4)) {
        let problem = logistic(seed, 4, 6);
        let run = gd(&problem, &w, 40, ScheduleSpec::AdaptiveAccumulator { c: 1.0, epsilon: 1e-8 });
        let steps = run.steps();
        prop_assert!(steps.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn gd_descends_and_contracts(seed in 0u64..1000, w in vec_strategy(4), frac in 0.1f64..1.0) {
        let problem = random_quadratic(seed, 4, 0.1);
        let l = problem.constants().l;
        let run = gd(&problem, &w, 30, ScheduleSpec::Constant { eta: frac / l });
        for pair in run.rows.windows(2) {
            prop_assert!(pair[1].value <= pair[0].value + 1e-12);
            prop_assert!(pair[1].dist_sq.unwrap() <= pair[0].dist_sq.unwrap() + 1e-12);
        }
        certify_deterministic(&run, &problem, Scheme::GdNonconvex).unwrap();
    }

    #[test]
    fn dual_averaging_with_weights_matches_gd(seed in 0u64..1000, w in vec_strategy(4)) {
        let problem = random_quadratic(seed, 4, 0.1);
        let eta = 0.2 / problem.constants().l;
        let da = run_dual_averaging(&problem, GammaRule::Linear, eta, &w, 20).unwrap();
        let steps: Vec<f64> = (0..20).map(|j| eta * (j + 1) as f64).collect();
        let mut x = w.clone();
        for (t, iterate) in da.iterates.iter().enumerate() {
            prop_assert!(max_abs_diff(iterate, &x) <= 1e-10 * (1.0 + x.norm()));
            if t < 20 {
                x = x.add_scaled(-steps[t], &problem.grad(&x).unwrap());
            }
        }
    }

    #[test]
    fn runs_are_deterministic(seed in 0u64..1000) {
        let problem = random_finite_sum(seed, 5, 3, 0.5);
        let w0 = Weights::new(vec![1.0, -1.0, 0.5]);
        let spec = SgdDriverSpec::single_loop(EstimatorKind::MiniBatch { b: 2 });
        let run = |s| {
            let mut policy = StepPolicy::constant(0.05).unwrap();
            run_unified_sgd(&problem, &spec, &mut policy, &w0, 25, s).unwrap()
        };
        prop_assert!(run(seed).same_trace(&run(seed)));
    }

    #[test]
    fn estimators_unbiased_and_sarah_bias_law(seed in 0u64..1000, w in vec_strategy(2), w_prev in vec_strategy(2), v_prev in vec_strategy(2), b in 1usize..=4) {
        let problem = random_finite_sum(seed, 4, 2, 1.0);
        let grad = problem.grad(&w).unwrap();
        let mini = EstimatorState::new(EstimatorKind::MiniBatch { b }, &problem, seed).unwrap();
        prop_assert!(max_abs_diff(&enumerate_conditional_mean(&mini, &problem, &w).unwrap(), &grad) <= 1e-12);
        let mut svrg = EstimatorState::new(EstimatorKind::Svrg { b }, &problem, seed).unwrap();
        svrg.set_snapshot(&problem, &w_prev).unwrap();
        prop_assert!(max_abs_diff(&enumerate_conditional_mean(&svrg, &problem, &w).unwrap(), &grad) <= 1e-12);

        // corrected variance law for an arbitrary snapshot
        let la = problem.constants().l_average.unwrap();
        let var = enumerate_moments(&svrg, &problem, &w).unwrap().variance;
        prop_assert!(var <= la * la * w.dist_sq(&w_prev) / b as f64 + 1e-9);

        let mut sarah = EstimatorState::new(EstimatorKind::Sarah { b }, &problem, seed).unwrap();
        sarah.set_previous(w_prev.clone(), v_prev.clone());
        let bias = enumerate_conditional_mean(&sarah, &problem, &w).unwrap().sub(&grad);
        let carried = v_prev.sub(&problem.grad(&w_prev).unwrap());
        prop_assert!(max_abs_diff(&bias, &carried) <= 1e-12);
    }

    #[test]
    fn sarah_variance_recursion(seed in 0u64..1000, w in vec_strategy(3), w_prev in vec_strategy(3), v_prev in vec_strategy(3), b in 1usize..=5) {
        let problem = random_finite_sum(seed, 5, 3, 1.0);
        let la = problem.constants().l_average.unwrap();
        let mut sarah = EstimatorState::new(EstimatorKind::Sarah { b }, &problem, seed).unwrap();
        sarah.set_previous(w_prev.clone(), v_prev.clone());
        let var = enumerate_moments(&sarah, &problem, &w).unwrap().variance;
        let prev = v_prev.dist_sq(&problem.grad(&w_prev).unwrap());
        prop_assert!(var <= prev + la * la * w.dist_sq(&w_prev) / b as f64 + 1e-9);
    }

    #[test]
    fn theta_sequences_feasible(steps in 1usize..500) {
        for rule in [ThetaRule::HalfShift, ThetaRule::Recurrence] {
            for (prev, theta) in ThetaSequence::new(rule).take(steps) {
                prop_assert!(theta >= 1.0);
                prop_assert!(prev * prev - theta * (theta - 1.0) >= -1e-9 * theta * theta);
            }
        }
    }

    #[test]
    fn diminishing_steps_sum_diverges_squares_converge(c in 0.1f64..2.0, beta in 0.5f64..5.0) {
        let spec = ScheduleSpec::Diminishing { c, beta, nu: 0.5 };
        let eta = |t: u64| spec.eta_at(t).unwrap();
        let partial = |n: u64| (0..n).map(eta).sum::<f64>();
        prop_assert!(partial(4000) > 1.9 * partial(1000));
        let sq = ScheduleSpec::Diminishing { c, beta, nu: 0.75 };
        let sq_sum = |n: u64| (0..n).map(|t| sq.eta_at(t).unwrap().powi(2)).sum::<f64>();
        prop_assert!(sq_sum(8000) - sq_sum(2000) < 0.5 * sq_sum(2000));
    }

    #[test]
    fn telescoped_gd_certificate(seed in 0u64..1000, w in vec_strategy(4)) {
        let problem = random_quadratic(seed, 4, 0.1);
        let l = problem.constants().l;
        let run = gd(&problem, &w, 50, ScheduleSpec::Constant { eta: 1.0 / l });
        let trace = certify_deterministic(&run, &problem, Scheme::GdConvex).unwrap();
        let (delta, budget) = trace.telescoped().unwrap();
        prop_assert!(delta <= budget + 1e-9 * (1.0 + budget.abs()));
        // corollary: T gap_T <= D_0
        let t = run.horizon() as f64;
        prop_assert!(t * run.rows.last().unwrap().gap.unwrap() <= trace.rows[0].d + 1e-9);
    }

    #[test]
    fn constant_horizon_bound_dominates_decay(r in 0.1f64..5.0, m in 0.1f64..5.0, t in 10usize..10_000) {
        let inputs = BoundInputs { l: None, r: Some(r), m: Some(m) };
        let c = r / m;
        let fixed = evaluate_bound(&RateBound::SgdConstantHorizon { c }, &inputs, t).unwrap();
        // with the optimal constant the fixed-horizon bound equals R M / sqrt(T+1)
        prop_assert!((fixed - r * m / ((t + 1) as f64).sqrt()).abs() <= 1e-9 * fixed);
        let steps = vec![c / ((t + 1) as f64).sqrt(); t + 1];
        let weighted = evaluate_bound(&RateBound::WeightedAverage { steps }, &inputs, t).unwrap();
        prop_assert!((weighted - fixed).abs() <= 1e-9 * fixed);
    }
}

#[test]
fn svrg_literal_variance_claim_needs_snapshot_at_optimum() {
    // a snapshot far from w* makes the variance exceed L^2 ||w - w*||^2
    let problem = fixtures::shifted_scalar_sum(&[0.0, 2.0, 4.0]).unwrap();
    let problem = {
        let components = match problem.kind() {
            ProblemKind::FiniteSumQuadratic { components } => components
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let mut c = c.clone();
                    c.hessian = DenseMatrix::identity(1).scale(1.0 + i as f64);
                    c
                })
                .collect(),
            _ => unreachable!(),
        };
        Problem::new(ProblemKind::FiniteSumQuadratic { components }).unwrap()
    };
    let w_star = problem.constants().w_star.clone().unwrap();
    let la = problem.constants().l_average.unwrap();
    let w = w_star.clone();
    let mut svrg = EstimatorState::new(EstimatorKind::Svrg { b: 1 }, &problem, 0).unwrap();
    svrg.set_snapshot(&problem, &w_star.add(&Weights::new(vec![5.0]))).unwrap();
    let var = enumerate_moments(&svrg, &problem, &w).unwrap().variance;
    assert!(var > la * la * w.dist_sq(&w_star) + 1.0);
    svrg.set_snapshot(&problem, &w_star).unwrap();
    assert!(enumerate_moments(&svrg, &problem, &w).unwrap().variance <= 1e-20);
}

#[test]
fn single_component_tree_is_deterministic() {
    let problem = fixtures::shifted_scalar_sum(&[1.5]).unwrap();
    let schedule = ScheduleSpec::Constant { eta: 0.3 };
    let trace = certify_stochastic_enumerated(
        &problem,
        EstimatorKind::MiniBatch { b: 1 },
        &schedule,
        &Weights::new(vec![-2.0]),
        5,
        Scheme::SgdConvexEnumerated,
    )
    .unwrap();
    assert_eq!(trace.paths, Some(1));
    assert_eq!(trace.rows.len(), 5);
    let gd_run = gd(&problem, &Weights::new(vec![-2.0]), 5, schedule);
    for (row, iterate) in trace.rows.iter().zip(&gd_run.iterates) {
        assert!((row.d - 0.5 * (iterate[0] - 1.5).powi(2)).abs() <= 1e-15);
    }
}

#[test]
fn svrg_stage_cost() {
    let centers: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let problem = fixtures::shifted_scalar_sum(&centers).unwrap();
    let spec = SgdDriverSpec {
        stages: 3,
        inner: 5,
        ..SgdDriverSpec::single_loop(EstimatorKind::Svrg { b: 2 })
    };
    let mut policy = StepPolicy::constant(0.1).unwrap();
    let run = run_unified_sgd(&problem, &spec, &mut policy, &Weights::new(vec![0.0]), 0, 1).unwrap();
    assert_eq!(run.horizon(), 15);
    assert_eq!(run.totals().component_grads, 3 * 30);
}

#[test]
fn nesterov_certifies_on_least_squares() {
    let problem = least_squares(3, 3, 8);
    let w0 = Weights::new(vec![1.0, -1.0, 0.5]);
    for theta in [ThetaRule::HalfShift, ThetaRule::Recurrence] {
        let mut policy = StepPolicy::constant(1.0).unwrap();
        let method = MethodSpec::new(MethodKind::Nesterov { theta });
        let run = run_deterministic(&problem, &method, &mut policy, &w0, 200).unwrap();
        certify_deterministic(&run, &problem, Scheme::NesterovConvex).unwrap();
    }
}
