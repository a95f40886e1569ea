use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftguard::backend::ClarabelSolver;
use shiftguard_core::conic::SolverSettings;
use shiftguard_core::deep_sdp::{bound_residual_fixed_action, ActionRegion, BoundOptions, ResidualBound};
use shiftguard_core::gauss::Ellipsoid;
use shiftguard_core::relu::{Activation, ReluNetwork};
use shiftguard_core::train::concat;

fn random_net(dims: &[usize], rng: &mut ChaCha8Rng) -> ReluNetwork {
    let mut net = ReluNetwork::random(dims, Activation::Relu, false, rng).unwrap();
    let p: Vec<f64> = net.params().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    net.set_params(&p).unwrap();
    net
}

fn spd(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a * a.transpose() + DMatrix::identity(n, n) * 0.2) * scale
}

fn bound(net: &ReluNetwork, s: &Ellipsoid, a: &ActionRegion, target: &DVector<f64>, opts: &BoundOptions) -> ResidualBound {
    bound_residual_fixed_action(&ClarabelSolver::default(), &SolverSettings::default(), net, s, a, target, opts).unwrap()
}

fn worst_violation(net: &ReluNetwork, s: &Ellipsoid, a: &Ellipsoid, target: &DVector<f64>, b: &ResidualBound, rng: &mut ChaCha8Rng, samples: usize) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for k in 0..samples {
        let (sv, av) = if k % 4 == 0 { (s.sample_boundary(rng), a.sample_boundary(rng)) } else { (s.sample_uniform(rng), a.sample_uniform(rng)) };
        let r = net.forward(&concat(&sv, &av)).unwrap() - target;
        worst = worst.max(r.dot(&(&b.omega * &r)) - 1.0);
    }
    worst
}

#[test]
fn affine_net_bound_is_near_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = random_net(&[3, 2], &mut rng);
    let s = Ellipsoid::new(DVector::from_vec(vec![0.5, -0.2]), spd(2, 0.1, &mut rng)).unwrap();
    let a = DVector::from_element(1, 0.3);
    let center = net.forward(&concat(s.center(), &a)).unwrap();
    let b = bound(&net, &s, &ActionRegion::Point(a), &center, &BoundOptions::default());
    let w = net.weights()[0].columns(0, 2).into_owned();
    let exact = &w * s.shape() * w.transpose();
    let exact_logvol = 0.5 * exact.determinant().ln();
    let bound_logvol = 0.5 * b.log_det_shape();
    assert!(bound_logvol >= exact_logvol - 1e-6, "{bound_logvol} {exact_logvol}");
    assert!(bound_logvol - exact_logvol <= 0.5, "{bound_logvol} {exact_logvol}");
    // the exact image set lies inside the bound
    for _ in 0..2000 {
        let sv = s.sample_boundary(&mut rng);
        let r = &w * (sv - s.center());
        assert!(r.dot(&(&b.omega * &r)) <= 1.0 + 1e-6);
    }
}

#[test]
fn zero_net_bound_contains_origin() {
    let net = ReluNetwork::new(
        vec![3, 4, 2],
        vec![DMatrix::zeros(4, 3), DMatrix::zeros(2, 4)],
        vec![DVector::zeros(4), DVector::from_vec(vec![0.7, -0.1])],
        Activation::Relu,
        None,
    )
    .unwrap();
    let s = Ellipsoid::ball(DVector::zeros(2), 1.0).unwrap();
    let a = Ellipsoid::ball(DVector::zeros(1), 0.5).unwrap();
    let b = bound(&net, &s, &ActionRegion::Region(a), &DVector::from_vec(vec![0.7, -0.1]), &BoundOptions::default());
    assert!(b.ellipsoid.contains(&DVector::zeros(2), 0.0).unwrap());
}

#[test]
fn random_relu_net_is_sound() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for opts in [BoundOptions::default(), BoundOptions { interval_bounds: true, ..BoundOptions::default() }] {
        let net = random_net(&[3, 4, 2], &mut rng);
        let s = Ellipsoid::new(DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)), spd(2, 0.2, &mut rng)).unwrap();
        let a = Ellipsoid::new(DVector::from_element(1, 0.1), DMatrix::from_element(1, 1, 0.3)).unwrap();
        let target = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let b = bound(&net, &s, &ActionRegion::Region(a.clone()), &target, &opts);
        let worst = worst_violation(&net, &s, &a, &target, &b, &mut rng, 10_000);
        assert!(worst <= 1e-6, "violation {worst}");
    }
}

#[test]
fn interval_bounds_do_not_loosen() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = random_net(&[3, 6, 2], &mut rng);
    let s = Ellipsoid::new(DVector::from_vec(vec![0.2, 0.1]), spd(2, 0.05, &mut rng)).unwrap();
    let a = ActionRegion::Region(Ellipsoid::ball(DVector::from_element(1, 0.2), 0.2).unwrap());
    let target = DVector::zeros(2);
    let plain = bound(&net, &s, &a, &target, &BoundOptions::default());
    let tight = bound(&net, &s, &a, &target, &BoundOptions { interval_bounds: true, ..BoundOptions::default() });
    assert!(tight.log_det_omega >= plain.log_det_omega - 1e-6);
}

#[test]
fn shrinking_action_region_never_loosens() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let net = random_net(&[3, 5, 2], &mut rng);
        let s = Ellipsoid::new(DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)), spd(2, 0.1, &mut rng)).unwrap();
        let shape = DMatrix::from_element(1, 1, rng.random_range(0.05..0.5));
        let center = DVector::from_element(1, rng.random_range(-0.5..0.5));
        let big = Ellipsoid::new(center.clone(), shape.clone()).unwrap();
        let small = Ellipsoid::new(center, shape * 0.5).unwrap();
        let target = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let b_big = bound(&net, &s, &ActionRegion::Region(big), &target, &BoundOptions::default());
        let b_small = bound(&net, &s, &ActionRegion::Region(small), &target, &BoundOptions::default());
        assert!(b_small.log_det_shape() <= b_big.log_det_shape() + 1e-6);
    }
}
