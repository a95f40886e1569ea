use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftguard::backend::ClarabelSolver;
use shiftguard_core::adapt::{
    run_episode, select_action, solve_adaptation, AdaptProblem, Anchor, Controller, EpisodeConfig, StepStatus,
};
use shiftguard_core::conic::{ConicProgram, ConicSolver, SolveStatus, SolverResult, SolverSettings};
use shiftguard_core::envs::{make_pi_star, sample_reference, EnvKind, Environment, LinearCar, LinearCarParams, NoiseMode};
use shiftguard_core::gauss::Ellipsoid;
use shiftguard_core::relu::{Activation, ReluNetwork};
use shiftguard_core::surrogate::SurrogatePair;
use shiftguard_core::train::concat;

fn affine_net(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DVector<f64>) -> ReluNetwork {
    let mut w = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    w.view_mut((0, 0), a.shape()).copy_from(a);
    w.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    ReluNetwork::new(vec![w.ncols(), w.nrows()], vec![w], vec![c.clone()], Activation::Relu, None).unwrap()
}

fn solve(p: &AdaptProblem) -> shiftguard_core::adapt::AdaptSolution {
    solve_adaptation(&ClarabelSolver::default(), &SolverSettings::default(), p).unwrap()
}

/// Oracle: scalar least squares `argmin_a ‖r − b a‖`, then clipped.
fn ls_action(b: &DVector<f64>, r: &DVector<f64>, lo: f64, hi: f64) -> (f64, f64) {
    let a = b.dot(r) / b.dot(b);
    (a, a.clamp(lo, hi))
}

fn affine_case(target: DVector<f64>) -> (AdaptProblem, DVector<f64>, DVector<f64>) {
    // rotation-scaled A keeps the image of a ball a ball
    let a = DMatrix::from_row_slice(2, 2, &[0.8, -0.6, 0.6, 0.8]);
    let b = DMatrix::from_column_slice(2, 1, &[0.5, 1.0]);
    let c = DVector::from_vec(vec![0.1, -0.2]);
    let mu = DVector::from_vec(vec![0.3, -0.4]);
    let region = Ellipsoid::ball(mu.clone(), 0.05).unwrap();
    let net = affine_net(&a, &b, &c);
    let rhs = &target - &a * &mu - &c;
    let p = AdaptProblem::new(net, region, target, DVector::from_element(1, -1.0), DVector::from_element(1, 1.0));
    (p, b.column(0).into_owned(), rhs)
}

#[test]
fn affine_recovers_least_squares_action() {
    let (p, b, rhs) = affine_case(DVector::from_vec(vec![0.6, 0.1]));
    let (free, _) = ls_action(&b, &rhs, -1.0, 1.0);
    assert!(free.abs() < 1.0);
    let sol = solve(&p);
    assert!((sol.adapted_action[0] - free).abs() <= 1e-3, "{} vs {free}", sol.adapted_action[0]);
    assert!(!sol.clipped);
}

#[test]
fn affine_clipped_optimum_lands_on_the_bound() {
    let (p, b, rhs) = affine_case(DVector::from_vec(vec![2.0, 2.5]));
    let (free, clipped) = ls_action(&b, &rhs, -1.0, 1.0);
    assert!(free > 1.0);
    let sol = solve(&p);
    assert!((sol.adapted_action[0] - clipped).abs() <= 1e-3, "{}", sol.adapted_action[0]);
}

#[test]
fn origin_anchor_is_solvable_and_feasible() {
    let (mut p, _, _) = affine_case(DVector::from_vec(vec![0.6, 0.1]));
    p.anchor = Anchor::Origin;
    p.reanchor = 0;
    let sol = solve(&p);
    assert!(sol.adapted_action[0].abs() <= 1.0);
    assert!(sol.anchor[0] == 0.0);
}

fn random_net(dims: &[usize], rng: &mut ChaCha8Rng) -> ReluNetwork {
    let mut net = ReluNetwork::random(dims, Activation::Relu, false, rng).unwrap();
    let p: Vec<f64> = net.params().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    net.set_params(&p).unwrap();
    net
}

#[test]
fn reachable_target_is_matched() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let net = random_net(&[3, 6, 2], &mut rng);
        let mu = DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
        let a0 = DVector::from_element(1, rng.random_range(-0.8..0.8));
        let target = net.forward(&concat(&mu, &a0)).unwrap();
        let region = Ellipsoid::ball(mu.clone(), 0.01).unwrap();
        let p = AdaptProblem::new(net.clone(), region, target.clone(), DVector::from_element(1, -1.0), DVector::from_element(1, 1.0));
        let sol = solve(&p);
        let r_hat = (net.forward(&concat(&mu, &sol.adapted_action)).unwrap() - &target).norm();
        assert!(r_hat <= 1e-3, "{r_hat}");
    }
}

#[test]
fn certified_regions_are_sound() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for k in 0..6 {
        let m = 1 + k % 2;
        let net = random_net(&[2 + m, 5, 2], &mut rng);
        let mu = DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
        let f = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.3..0.3));
        let region = Ellipsoid::new(mu, &f * f.transpose() + DMatrix::identity(2, 2) * 0.01).unwrap();
        let target = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let mut p = AdaptProblem::new(net.clone(), region.clone(), target.clone(), DVector::from_element(m, -1.0), DVector::from_element(m, 1.0));
        if k >= 3 {
            p.anchor = Anchor::Origin;
        }
        let sol = solve(&p);
        let actions = sol.action_region().unwrap();
        let bound = sol.residual_bound().unwrap();
        for j in 0..4000 {
            let (s, a) = if j % 4 == 0 {
                (region.sample_boundary(&mut rng), actions.sample_boundary(&mut rng))
            } else {
                (region.sample_uniform(&mut rng), actions.sample_uniform(&mut rng))
            };
            let r = net.forward(&concat(&s, &a)).unwrap() - &target;
            let q = r.dot(&(&sol.omega * &r));
            assert!(q <= 1.0 + 1e-6, "instance {k}: {q}");
        }
        assert!(bound.contains(&(net.forward(&concat(region.center(), &sol.unclipped_action)).unwrap() - &target), 1e-6).unwrap());
    }
}

#[test]
fn structural_invariants_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for k in 0..6 {
        let m = 1 + k % 2;
        let net = random_net(&[2 + m, 4, 2], &mut rng);
        let mu = DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
        let region = Ellipsoid::ball(mu, 0.1).unwrap();
        let target = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let lo = DVector::from_element(m, -0.5);
        let hi = DVector::from_element(m, 1.5);
        let p = AdaptProblem::new(net, region, target, lo.clone(), hi.clone());
        let sol = solve(&p);
        // U ℓ̂ ≤ V ≤ U û in deviation coordinates, up to solver tolerance
        let lo_hat = (&lo - &sol.anchor).component_div(&sol.action_scale);
        let hi_hat = (&hi - &sol.anchor).component_div(&sol.action_scale);
        let tol = 1e-6 * (1.0 + sol.u.amax());
        assert!((&sol.u * &lo_hat - &sol.v).max() <= tol);
        assert!((&sol.v - &sol.u * &hi_hat).max() <= tol);
        assert!(sol.u.trace() * p.delta <= sol.tau_action + tol);
        assert!(sol.u.symmetric_eigenvalues().min() >= p.trust_floor * (1.0 - 1e-3));
        for i in 0..m {
            assert!(sol.adapted_action[i] >= lo[i] && sol.adapted_action[i] <= hi[i]);
        }
        if m == 1 {
            let slack = 1e-6 * (hi[0] - lo[0]);
            assert!(sol.unclipped_action[0] >= lo[0] - slack && sol.unclipped_action[0] <= hi[0] + slack, "{}", sol.unclipped_action[0]);
        }
        // τ₂ presses against tr(U)·δ, so tr(τ₂U⁻¹) = δ·tr(U)·tr(U⁻¹) ≥ δ·m²
        let uinv_trace = sol.u.clone().try_inverse().unwrap().trace();
        let shape_trace = uinv_trace * sol.tau_action;
        let floor = p.delta * sol.u.trace() * uinv_trace;
        assert!(shape_trace >= p.delta * (m * m) as f64 * (1.0 - 1e-3));
        assert!(shape_trace <= 10.0 * floor, "instance {k}: {shape_trace} vs {floor}");
        assert!((sol.tau_action - p.delta * sol.u.trace()).abs() <= 1e-3 * sol.tau_action, "instance {k}");
    }
}

#[test]
fn tie_and_strict_improvement_rules() {
    let w = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let net = ReluNetwork::new(vec![2, 1], vec![w], vec![DVector::zeros(1)], Activation::Relu, None).unwrap();
    let cov = ReluNetwork::new(vec![2, 1], vec![DMatrix::zeros(1, 2)], vec![DVector::zeros(1)], Activation::Relu, None).unwrap();
    let sur = SurrogatePair::new(net, cov);
    let s = DVector::zeros(1);
    let target = DVector::from_element(1, 1.0);
    let pi = DVector::zeros(1);
    let exact = DVector::from_element(1, 1.0);
    let d = select_action(&sur, &s, &pi, Some(&exact), &target).unwrap();
    assert!(d.chose_adapted);
    assert_eq!(d.pi_star_residual, 1.0);
    assert_eq!(d.adapted_residual, Some(0.0));
    let d = select_action(&sur, &s, &pi, Some(&pi), &target).unwrap();
    assert!(!d.chose_adapted);
}

struct FailingSolver(SolveStatus);

impl ConicSolver for FailingSolver {
    fn solve(&self, _: &ConicProgram, _: &SolverSettings) -> SolverResult {
        SolverResult::failed(self.0, 0.0, "forced".into())
    }
}

/// Perfect model of the nominal training car: `x' = A x + B u + E[w]`.
fn linear_surrogate(p: &LinearCarParams) -> SurrogatePair {
    let mean = affine_net(&p.a, &p.b, &p.noise_mean);
    let log_var = DVector::from_element(3, -8.0);
    let cov = ReluNetwork::new(vec![4, 3], vec![DMatrix::zeros(3, 4)], vec![log_var], Activation::Relu, None).unwrap();
    SurrogatePair::new(mean, cov)
}

fn clock() -> f64 {
    0.0
}

fn linear_setup(horizon: usize) -> (LinearCar, SurrogatePair, Box<dyn shiftguard_core::envs::Policy>, Vec<DVector<f64>>) {
    let pi = make_pi_star(EnvKind::LinearCar).unwrap();
    let mut train = LinearCar::new(LinearCarParams::train()).unwrap();
    let reference = sample_reference(&mut train, pi.as_ref(), horizon).unwrap();
    let mut env = LinearCar::new(LinearCarParams::train()).unwrap();
    env.set_noise_mode(NoiseMode::Mean);
    (env, linear_surrogate(&LinearCarParams::train()), pi, reference)
}

#[test]
fn zero_horizon_gives_empty_log() {
    let (mut env, sur, pi, reference) = linear_setup(0);
    let cfg = EpisodeConfig { horizon: 0, ..EpisodeConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let log = run_episode(&mut env, &sur, pi.as_ref(), &reference, &Controller::Adapted, &cfg, &ClarabelSolver::default(), &mut rng, &clock).unwrap();
    assert!(log.is_empty());
}

#[test]
fn solver_failures_fall_back_to_pi_star() {
    let (mut env, sur, pi, reference) = linear_setup(6);
    let cfg = EpisodeConfig { horizon: 6, ..EpisodeConfig::default() };
    for (status, expect) in [
        (SolveStatus::Infeasible, StepStatus::Infeasible),
        (SolveStatus::NumericalFailure, StepStatus::NumericalFailure),
        (SolveStatus::Unbounded, StepStatus::Unbounded),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let log = run_episode(&mut env, &sur, pi.as_ref(), &reference, &Controller::Adapted, &cfg, &FailingSolver(status), &mut rng, &clock).unwrap();
        assert_eq!(log.len(), 6);
        assert_eq!(log.steps[0].status, StepStatus::Initial);
        for rec in &log.steps[1..] {
            assert_eq!(rec.status, expect);
            let d = rec.decision.as_ref().unwrap();
            assert_eq!(rec.action, d.pi_star_action);
            assert!(rec.log_det_bound.is_none());
        }
    }
}

#[test]
fn same_environment_never_worse_than_pi_star() {
    let (mut env, sur, pi, reference) = linear_setup(40);
    let cfg = EpisodeConfig { horizon: 40, ..EpisodeConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let plain = run_episode(&mut env, &sur, pi.as_ref(), &reference, &Controller::Unadapted, &cfg, &ClarabelSolver::default(), &mut rng, &clock).unwrap();
    let adapted = run_episode(&mut env, &sur, pi.as_ref(), &reference, &Controller::Adapted, &cfg, &ClarabelSolver::default(), &mut rng, &clock).unwrap();
    assert_eq!(adapted.len(), 40);
    assert!(adapted.mean_residual() <= plain.mean_residual() + 1e-6, "{} vs {}", adapted.mean_residual(), plain.mean_residual());
    for rec in &adapted.steps {
        let d = rec.decision.as_ref().unwrap();
        assert!(d.chosen_residual() <= d.pi_star_residual + 1e-12);
    }
}
