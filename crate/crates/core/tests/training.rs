use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftguard_core::relu::{Activation, ReluNetwork};
use shiftguard_core::train::{
    concat, cov_loss_grad, joint_loss_grad, mean_loss_grad, rmse, rmse_embedded, train_cov, train_joint_embedded, train_mean,
    Architecture, Optimizer, TrainConfig, Transition,
};
use shiftguard_core::Error;

fn linear_data(count: usize, noise_std: f64, seed: u64) -> Vec<Transition> {
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 0.95]);
    let b = DMatrix::from_row_slice(2, 1, &[0.05, 0.3]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let s = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let u = DVector::from_fn(1, |_, _| rng.random_range(-1.0..1.0));
            let noise = DVector::from_fn(2, |_, _| {
                let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                z * noise_std
            });
            let sp = &a * &s + &b * &u + noise;
            Transition { s, a: u, sp }
        })
        .collect()
}

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, learning_rate: 3e-3, batch_size: 32, lr_decay: 0.98, ..TrainConfig::default() }
}

#[test]
fn linear_map_is_learned_by_affine_net() {
    let data = linear_data(1000, 0.0, 1);
    let (net, report) = train_mean(&data, &Architecture::relu(&[]), &quick_cfg(150)).unwrap();
    let err = rmse(&net, &data).unwrap();
    assert!(err <= 1e-3, "rmse {err}");
    assert!(report.final_train_loss() <= report.initial_train_loss());
}

#[test]
fn relu_net_loss_does_not_increase() {
    let data = linear_data(300, 0.01, 2);
    let (_, report) = train_mean(&data, &Architecture::relu(&[6]), &quick_cfg(20)).unwrap();
    assert!(report.final_train_loss() <= report.initial_train_loss());
}

#[test]
fn empty_data_rejected() {
    assert!(matches!(train_mean(&[], &Architecture::relu(&[4]), &quick_cfg(3)), Err(Error::EmptyData)));
}

#[test]
fn divergence_reported() {
    let data = linear_data(200, 0.0, 3);
    let cfg = TrainConfig { learning_rate: 1e6, optimizer: Optimizer::Sgd, epochs: 30, ..TrainConfig::default() };
    assert!(matches!(train_mean(&data, &Architecture::relu(&[8]), &cfg), Err(Error::Diverged { .. })));
}

#[test]
fn training_is_deterministic() {
    let data = linear_data(200, 0.01, 4);
    let (a, _) = train_mean(&data, &Architecture::relu(&[5]), &quick_cfg(5)).unwrap();
    let (b, _) = train_mean(&data, &Architecture::relu(&[5]), &quick_cfg(5)).unwrap();
    assert_eq!(a.params(), b.params());
    let (ca, _) = train_cov(&data, &a, &Architecture::relu(&[4]), &quick_cfg(3)).unwrap();
    let (cb, _) = train_cov(&data, &a, &Architecture::relu(&[4]), &quick_cfg(3)).unwrap();
    assert_eq!(ca.params(), cb.params());
    let (ea, ma, _) = train_joint_embedded(&data, &[3], 2, &Architecture::relu(&[4]), &quick_cfg(3)).unwrap();
    let (eb, mb, _) = train_joint_embedded(&data, &[3], 2, &Architecture::relu(&[4]), &quick_cfg(3)).unwrap();
    assert_eq!((ea.params(), ma.params()), (eb.params(), mb.params()));
}

#[test]
fn known_noise_variance_recovered() {
    let data = linear_data(4000, 1e-2, 5);
    let (mean, _) = train_mean(&data, &Architecture::relu(&[]), &quick_cfg(100)).unwrap();
    let (cov, _) = train_cov(&data, &mean, &Architecture::relu(&[4]), &quick_cfg(40)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let x = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let var = cov.forward(&x).unwrap().map(f64::exp);
        for v in var.iter() {
            assert!(*v > 0.5e-4 && *v < 2e-4, "variance {v}");
        }
    }
}

#[test]
fn zero_noise_variance_is_tiny() {
    let data = linear_data(1000, 0.0, 7);
    let (mean, _) = train_mean(&data, &Architecture::relu(&[]), &quick_cfg(150)).unwrap();
    let (cov, _) = train_cov(&data, &mean, &Architecture::relu(&[4]), &quick_cfg(20)).unwrap();
    for t in data.iter().take(50) {
        let var = cov.forward(&t.input()).unwrap().map(f64::exp);
        assert!(var.max() <= 1e-6, "{var}");
    }
}

#[test]
fn identity_embedder_matches_direct_fit() {
    let data = linear_data(1000, 0.0, 8);
    let (e, m, _) = train_joint_embedded(&data, &[], 2, &Architecture::relu(&[]), &quick_cfg(150)).unwrap();
    let err = rmse_embedded(&e, &m, &data).unwrap();
    assert!(err <= 2e-3, "rmse {err}");
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn central_difference(p: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|k| {
            q[k] = p[k] + h;
            let up = f(&q);
            q[k] = p[k] - h;
            let down = f(&q);
            q[k] = p[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

// keeps every pre-activation away from the ReLU kink so finite differences are valid
fn kink_free_batch(rng: &mut ChaCha8Rng, net: &ReluNetwork, count: usize, dim: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::new();
    while out.len() < count {
        let x = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let trace = net.forward_trace(&x).unwrap();
        if trace.stacked_pre().iter().all(|v| v.abs() > 1e-3) {
            out.push(x);
        }
    }
    out
}

fn random_batch(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<DVector<f64>> {
    (0..count).map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0))).collect()
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..20 {
        let skip = trial % 2 == 0;
        let net = ReluNetwork::random(&[3, 5, 4, 2], Activation::Relu, skip, &mut rng).unwrap();
        let xs = kink_free_batch(&mut rng, &net, 6, 3);
        let ys = random_batch(&mut rng, 6, 2);
        let (_, g) = mean_loss_grad(&net, &xs, &ys);
        let fd = central_difference(&net.params(), 1e-5, |p| {
            let mut n = net.clone();
            n.set_params(p).unwrap();
            mean_loss_grad(&n, &xs, &ys).0
        });
        assert!(rel_err(&g, &fd) < 1e-4, "mean trial {trial}: {}", rel_err(&g, &fd));

        let r2: Vec<DVector<f64>> = random_batch(&mut rng, 6, 2).iter().map(|v| v.map(|e| e.abs())).collect();
        let (_, g) = cov_loss_grad(&net, &xs, &r2);
        let fd = central_difference(&net.params(), 1e-5, |p| {
            let mut n = net.clone();
            n.set_params(p).unwrap();
            cov_loss_grad(&n, &xs, &r2).0
        });
        assert!(rel_err(&g, &fd) < 1e-4, "cov trial {trial}");

        let emb = ReluNetwork::random(&[2, 4, 2], Activation::Tanh, false, &mut rng).unwrap();
        let (mut ss, mut acts) = (Vec::new(), Vec::new());
        while ss.len() < 6 {
            let s = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let a = DVector::from_fn(1, |_, _| rng.random_range(-1.0..1.0));
            let x = concat(&emb.forward(&s).unwrap(), &a);
            if net.forward_trace(&x).unwrap().stacked_pre().iter().all(|v| v.abs() > 1e-3) {
                ss.push(s);
                acts.push(a);
            }
        }
        let (_, g) = joint_loss_grad(&emb, &net, &ss, &acts, &ys);
        let ne = emb.num_params();
        let mut p = emb.params();
        p.extend(net.params());
        let fd = central_difference(&p, 1e-5, |q| {
            let mut e = emb.clone();
            let mut n = net.clone();
            e.set_params(&q[..ne]).unwrap();
            n.set_params(&q[ne..]).unwrap();
            joint_loss_grad(&e, &n, &ss, &acts, &ys).0
        });
        assert!(rel_err(&g, &fd) < 1e-4, "joint trial {trial}");
    }
}
