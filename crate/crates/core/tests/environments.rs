use approx::assert_abs_diff_eq;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shiftguard_core::envs::{
    acc_step, acc_target_speed, collect_transitions, dubins_step, linear_step, make_env, make_pi_star, sample_reference, Acc,
    AccParams, AccPi, AccState, DubinsParams, DubinsPath, EnvKind, Environment, Excitation, LinearCarParams, NoiseMode, Policy,
    StanleyPolicy, Variant,
};

#[test]
fn linear_printed_matrices() {
    let zero = DVector::zeros(3);
    let train = LinearCarParams::train();
    let next = linear_step(&zero, 0.0, &train, &train.noise_mean);
    assert_eq!(next.as_slice(), &[0.0, 0.0, 0.2]);
    let deploy = LinearCarParams::deploy();
    assert_eq!(linear_step(&zero, 0.0, &deploy, &zero), zero);
    let next = linear_step(&DVector::from_vec(vec![0.0, 0.0, 1.0]), 0.0, &deploy, &zero);
    assert_eq!(next.as_slice(), &[0.0046, 0.0885, 0.7788]);
}

#[test]
fn linear_step_matches_hand_arithmetic() {
    let p = LinearCarParams::train();
    let x = DVector::from_vec(vec![0.3, -1.2, 0.7]);
    let w = DVector::from_vec(vec![0.01, -0.02, 0.03]);
    let got = linear_step(&x, 1.1, &p, &w);
    let want = [
        0.3 + 0.1 * -1.2 + 0.0047 * 0.7 + 0.003 * 1.1 + 0.01,
        -1.2 + 0.0906 * 0.7 + 0.0094 * 1.1 - 0.02,
        0.8187 * 0.7 + 0.1813 * 1.1 + 0.03,
    ];
    for i in 0..3 {
        assert_abs_diff_eq!(got[i], want[i], epsilon = 1e-15);
    }
    // out-of-range inputs are clipped to [-3, 3]
    assert_eq!(linear_step(&x, 10.0, &p, &w), linear_step(&x, 3.0, &p, &w));
}

#[test]
fn dubins_zero_steering_keeps_heading() {
    let p = DubinsParams::train();
    let st = DVector::from_vec(vec![1.0, 2.0, 0.6, 0.8]);
    let next = dubins_step(&st, 0.0, &p, None);
    assert_eq!(next[2], 0.6);
    assert_eq!(next[3], 0.8);
    assert_abs_diff_eq!(next[0], 1.0 + 4.9 * 0.01 * 0.8, epsilon = 1e-14);
    assert_abs_diff_eq!(next[1], 2.0 + 4.9 * 0.01 * 0.6, epsilon = 1e-14);
}

#[test]
fn dubins_heading_stays_on_unit_circle() {
    let p = DubinsParams::train();
    let mut st = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
    for k in 0..500 {
        st = dubins_step(&st, 0.6 * ((k as f64) * 0.05).sin(), &p, None);
        assert_abs_diff_eq!(st[2] * st[2] + st[3] * st[3], 1.0, epsilon = 1e-12);
    }
}

#[test]
fn stanley_is_silent_on_the_path() {
    let p = DubinsParams::train();
    let pi = StanleyPolicy::new(DubinsPath::Line { x: 0.0, y: 0.0, theta: 0.0 }, &p);
    let phi = pi.act(0, &DVector::from_vec(vec![3.0, 0.0, 0.0, 1.0]));
    assert!(phi[0].abs() < 1e-6);
    // a car left of the path steers right
    assert!(pi.act(0, &DVector::from_vec(vec![3.0, 1.0, 0.0, 1.0]))[0] < 0.0);
}

#[test]
fn acc_spacing_logic() {
    let p = AccParams::train();
    let far = AccState { x_ego: 0.0, v_ego: 30.0, a_ego: 0.0, x_lead: 500.0, v_lead: 20.0, time: 0.0, int_err: 0.0, v_err: 0.0 };
    assert_eq!(acc_target_speed(&far, &p), 30.0);
    let near = AccState { x_lead: 20.0, ..far };
    assert_eq!(acc_target_speed(&near, &p), 20.0);
    let next = acc_step(&AccState { a_ego: 0.0, ..far }, 0.0, &p, 0.0);
    assert_eq!(next.v_err, 0.0);
    assert!(next.d_rel().is_finite());
    assert_eq!(AccPi::new(&p).act(0, &DVector::zeros(3))[0], 0.0);
}

#[test]
fn acc_pi_reaches_set_speed() {
    // lead far ahead at constant speed, so cruise mode governs
    let p = AccParams { lead_amplitude: 0.0, v_lead0: 40.0, x_lead0: 2000.0, ..AccParams::train() };
    let mut env = Acc::new(p);
    let pi = AccPi::new(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut s = env.reset();
    let mut settled_at = None;
    for t in 0..600 {
        s = env.step(&pi.act(t, &s), &mut rng).unwrap();
        let close = (env.state().v_ego - 30.0).abs() <= 0.5;
        match (close, settled_at) {
            (true, None) => settled_at = Some(t),
            (false, Some(_)) => settled_at = None,
            _ => {}
        }
    }
    let t = settled_at.expect("speed settles");
    assert!((t + 1) as f64 * p.dt <= 60.0, "settled after {t} steps");
}

#[test]
fn acc_deploy_shift_crashes_without_adaptation() {
    let pi = make_pi_star(EnvKind::Acc).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut min_gap = [f64::INFINITY; 2];
    for (k, variant) in [Variant::Train, Variant::Deploy].into_iter().enumerate() {
        let mut env = make_env(EnvKind::Acc, variant).unwrap();
        let mut s = env.reset();
        for t in 0..400 {
            s = env.step(&pi.act(t, &s), &mut rng).unwrap();
            min_gap[k] = min_gap[k].min(env.gap().unwrap());
        }
    }
    assert!(min_gap[0] > 0.0 && min_gap[1] < 0.0, "{min_gap:?}");
}

#[test]
fn lqr_closes_a_stable_loop() {
    let p = LinearCarParams::train();
    let k = shiftguard_core::envs::LqrTracker::new(&p, 100, 1.5, 5.0).unwrap();
    assert!(k.closed_loop_radius(&p) < 1.0);
}

#[test]
fn reference_and_datasets() {
    for kind in [EnvKind::Dubins, EnvKind::LinearCar, EnvKind::Acc] {
        let pi = make_pi_star(kind).unwrap();
        let mut env = make_env(kind, Variant::Train).unwrap();
        let r0 = sample_reference(env.as_mut(), pi.as_ref(), 0).unwrap();
        assert_eq!(r0, vec![env.reset()]);
        let a = sample_reference(env.as_mut(), pi.as_ref(), 30).unwrap();
        assert_eq!(a.len(), 31);
        assert_eq!(a, sample_reference(env.as_mut(), pi.as_ref(), 30).unwrap());

        let mut dep = make_env(kind, Variant::Deploy).unwrap();
        let ex = Excitation::default();
        let d1 = collect_transitions(dep.as_mut(), pi.as_ref(), &ex, 2000, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let d2 = collect_transitions(dep.as_mut(), pi.as_ref(), &ex, 2000, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(d1.len(), 2000);
        assert_eq!(d1, d2);
        // empirical action range against the actuator box
        let (lo, hi) = (dep.lower()[0], dep.upper()[0]);
        let amin = d1.iter().map(|t| t.a[0]).fold(f64::INFINITY, f64::min);
        let amax = d1.iter().map(|t| t.a[0]).fold(f64::NEG_INFINITY, f64::max);
        assert!((amax - amin) >= 0.9 * (hi - lo), "{kind:?}: [{amin}, {amax}]");
        assert!(amin >= lo && amax <= hi);
    }
}

#[test]
fn dubins_shift_degrades_tracking() {
    let pi = make_pi_star(EnvKind::Dubins).unwrap();
    let mut train = make_env(EnvKind::Dubins, Variant::Train).unwrap();
    let reference = sample_reference(train.as_mut(), pi.as_ref(), 300).unwrap();
    let mut err = [0.0; 2];
    for (k, variant) in [Variant::Train, Variant::Deploy].into_iter().enumerate() {
        let mut env = make_env(EnvKind::Dubins, variant).unwrap();
        env.set_noise_mode(NoiseMode::Mean);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = env.reset();
        for t in 0..300 {
            s = env.step(&pi.act(t, &s), &mut rng).unwrap();
            err[k] += (&reference[t + 1] - &s).norm();
        }
    }
    assert!(err[1] > err[0], "{err:?}");
}
