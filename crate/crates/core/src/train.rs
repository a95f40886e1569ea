//! Mini-batch training of mean, log-variance and embedder+mean surrogates.
//!
//! Inputs and targets are standardized per coordinate before training and the
//! scaling is folded back into the first and last layers afterwards, so the
//! returned networks act on raw units.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::relu::{Activation, ReluNetwork};

/// One `(s, a, s')` sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: DVector<f64>,
    pub a: DVector<f64>,
    pub sp: DVector<f64>,
}

impl Transition {
    pub fn input(&self) -> DVector<f64> {
        concat(&self.s, &self.a)
    }
}

pub fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub validation_fraction: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 200,
            seed: 0,
            optimizer: Optimizer::Adam,
            validation_fraction: 0.1,
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.epochs > 0
            && (0.0..1.0).contains(&self.validation_fraction)
            && self.lr_decay > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("training settings must be positive with validation fraction in [0, 1)".into()))
        }
    }
}

/// Hidden layout and activation of a network to be trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Adds a linear input-to-output term initialized by least squares.
    pub linear_skip: bool,
}

impl Architecture {
    pub fn relu(hidden: &[usize]) -> Self {
        Self { hidden: hidden.to_vec(), activation: Activation::Relu, linear_skip: false }
    }

    pub fn with_skip(mut self) -> Self {
        self.linear_skip = true;
        self
    }

    fn dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(&self.hidden);
        d.push(output);
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Per-epoch losses in standardized units; row 0 is the initial network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn initial_train_loss(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.train_loss)
    }

    pub fn final_train_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_loss)
    }
}

/// Affine standardization `x̂ = (x - mean) / scale` per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[DVector<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyData)?;
        let n = first.len();
        let count = rows.len() as f64;
        let mut mean = DVector::zeros(n);
        for r in rows {
            check_dim(n, r.len())?;
            mean += r;
        }
        mean /= count;
        let mut var = DVector::zeros(n);
        for r in rows {
            var += (r - &mean).map(|d| d * d);
        }
        let scale = (var / count).map(|v| {
            let s = libm::sqrt(v);
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        });
        Ok(Self { mean, scale })
    }

    pub fn identity(n: usize) -> Self {
        Self { mean: DVector::zeros(n), scale: DVector::from_element(n, 1.0) }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        (x - &self.mean).component_div(&self.scale)
    }

    /// `T, c` with `x̂ = T x + c`.
    pub fn forward_affine(&self) -> (DMatrix<f64>, DVector<f64>) {
        let inv = self.scale.map(|s| 1.0 / s);
        (DMatrix::from_diagonal(&inv), -self.mean.component_mul(&inv))
    }

    /// `S, d` with `x = S x̂ + d`.
    pub fn inverse_affine(&self) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::from_diagonal(&self.scale), self.mean.clone())
    }

    fn concat(&self, other: &Standardizer) -> Standardizer {
        Standardizer { mean: concat(&self.mean, &other.mean), scale: concat(&self.scale, &other.scale) }
    }
}

/// Ridge least squares `Y ≈ D X + c` over paired rows.
fn linear_fit(xs: &[DVector<f64>], ys: &[DVector<f64>]) -> (DMatrix<f64>, DVector<f64>) {
    let k = xs[0].len() + 1;
    let p = ys[0].len();
    let mut gram = DMatrix::<f64>::identity(k, k) * 1e-8;
    let mut cross = DMatrix::<f64>::zeros(k, p);
    for (x, y) in xs.iter().zip(ys) {
        let mut xa = DVector::from_element(k, 1.0);
        xa.rows_mut(0, k - 1).copy_from(x);
        gram += &xa * xa.transpose();
        cross += &xa * y.transpose();
    }
    let theta = gram.cholesky().expect("ridge gram is positive definite").solve(&cross);
    let d = theta.rows(0, k - 1).transpose();
    let c = theta.row(k - 1).transpose();
    (d, c)
}

fn init_skip(net: &mut ReluNetwork, xs: &[DVector<f64>], ys: &[DVector<f64>]) {
    let (d, c) = linear_fit(xs, ys);
    let layers = net.weights().len();
    let mut p = net.params();
    // shrink the nonlinear head so the start point is the linear fit
    let mut off = 0;
    for i in 0..layers {
        let w = net.weights()[i].len();
        let b = net.biases()[i].len();
        if i + 1 == layers {
            for v in &mut p[off..off + w] {
                *v *= 0.1;
            }
            p[off + w..off + w + b].copy_from_slice(c.as_slice());
        }
        off += w + b;
    }
    for r in 0..d.nrows() {
        for col in 0..d.ncols() {
            p[off] = d[(r, col)];
            off += 1;
        }
    }
    net.set_params(&p).expect("layout unchanged");
}

/// Loss over a set of sample indices, with gradient in a flat parameter layout.
trait Objective {
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, p: &[f64]);
    fn loss_grad(&self, idx: &[usize], grad: &mut [f64]) -> f64;
    fn loss(&self, idx: &[usize]) -> f64;
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn fit<O: Objective>(obj: &mut O, samples: usize, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if samples == 0 {
        return Err(Error::EmptyData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples).collect();
    order.shuffle(&mut rng);
    let n_val = ((samples as f64) * cfg.validation_fraction) as usize;
    let n_val = n_val.min(samples - 1);
    let (train_idx, val_idx) = order.split_at(samples - n_val);
    let mut train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let eval = |o: &O, train: &[usize]| {
        let tr = o.loss(train);
        let va = if val_idx.is_empty() { f64::NAN } else { o.loss(&val_idx) };
        (tr, va)
    };

    let mut params = obj.params();
    let np = params.len();
    let mut grad = vec![0.0; np];
    let mut adam = Adam { m: vec![0.0; np], v: vec![0.0; np], t: 0 };
    let (tr0, va0) = eval(obj, &train_idx);
    if !tr0.is_finite() {
        return Err(Error::Diverged { epoch: 0, loss: tr0 });
    }
    let mut report = TrainReport { epochs: vec![EpochStats { epoch: 0, train_loss: tr0, val_loss: va0 }] };
    let mut best = (tr0, params.clone());
    let mut lr = cfg.learning_rate;

    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = obj.loss_grad(batch, &mut grad);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                Optimizer::Adam => {
                    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
                    adam.t += 1;
                    let c1 = 1.0 - libm::pow(b1, adam.t as f64);
                    let c2 = 1.0 - libm::pow(b2, adam.t as f64);
                    for k in 0..np {
                        adam.m[k] = b1 * adam.m[k] + (1.0 - b1) * grad[k];
                        adam.v[k] = b2 * adam.v[k] + (1.0 - b2) * grad[k] * grad[k];
                        params[k] -= lr * (adam.m[k] / c1) / (libm::sqrt(adam.v[k] / c2) + eps);
                    }
                }
            }
            obj.set_params(&params);
        }
        let (tr, va) = eval(obj, &train_idx);
        if !tr.is_finite() {
            return Err(Error::Diverged { epoch, loss: tr });
        }
        if tr <= best.0 {
            best = (tr, params.clone());
        }
        report.epochs.push(EpochStats { epoch, train_loss: tr, val_loss: va });
        lr *= cfg.lr_decay;
    }
    obj.set_params(&best.1);
    if let Some(last) = report.epochs.last_mut() {
        if best.0 < last.train_loss {
            let va = if val_idx.is_empty() { f64::NAN } else { obj.loss(&val_idx) };
            report.epochs.push(EpochStats { epoch: cfg.epochs, train_loss: best.0, val_loss: va });
        }
    }
    Ok(report)
}

struct MeanObjective<'a> {
    net: ReluNetwork,
    xs: &'a [DVector<f64>],
    ys: &'a [DVector<f64>],
}

impl Objective for MeanObjective<'_> {
    fn params(&self) -> Vec<f64> {
        self.net.params()
    }

    fn set_params(&mut self, p: &[f64]) {
        self.net.set_params(p).expect("fixed layout");
    }

    fn loss_grad(&self, idx: &[usize], grad: &mut [f64]) -> f64 {
        mean_loss_grad_idx(&self.net, self.xs, self.ys, idx, Some(grad))
    }

    fn loss(&self, idx: &[usize]) -> f64 {
        mean_loss_grad_idx(&self.net, self.xs, self.ys, idx, None)
    }
}

fn mean_loss_grad_idx(net: &ReluNetwork, xs: &[DVector<f64>], ys: &[DVector<f64>], idx: &[usize], mut grad: Option<&mut [f64]>) -> f64 {
    let scale = 1.0 / idx.len() as f64;
    let mut total = 0.0;
    let mut buf = Vec::new();
    for &i in idx {
        let tr = net.forward_trace(&xs[i]).expect("dims validated");
        let diff = &tr.output - &ys[i];
        total += diff.norm_squared();
        if let Some(g) = grad.as_deref_mut() {
            net.backward_into(&xs[i], &tr, &(diff * (2.0 * scale)), &mut buf).expect("dims validated");
            for (a, b) in g.iter_mut().zip(&buf) {
                *a += b;
            }
        }
    }
    total * scale
}

/// `(1/B) Σ ‖f(x) - y‖²` and its parameter gradient.
pub fn mean_loss_grad(net: &ReluNetwork, xs: &[DVector<f64>], ys: &[DVector<f64>]) -> (f64, Vec<f64>) {
    let idx: Vec<usize> = (0..xs.len()).collect();
    let mut g = vec![0.0; net.num_params()];
    let l = mean_loss_grad_idx(net, xs, ys, &idx, Some(&mut g));
    (l, g)
}

struct CovObjective<'a> {
    net: ReluNetwork,
    xs: &'a [DVector<f64>],
    r2: &'a [DVector<f64>],
}

fn cov_loss_grad_idx(net: &ReluNetwork, xs: &[DVector<f64>], r2: &[DVector<f64>], idx: &[usize], mut grad: Option<&mut [f64]>) -> f64 {
    let scale = 1.0 / idx.len() as f64;
    let mut total = 0.0;
    let mut buf = Vec::new();
    for &i in idx {
        let tr = net.forward_trace(&xs[i]).expect("dims validated");
        let var = tr.output.map(libm::exp);
        let diff = &var - &r2[i];
        total += diff.norm_squared();
        if let Some(g) = grad.as_deref_mut() {
            let g_out = diff.component_mul(&var) * (2.0 * scale);
            net.backward_into(&xs[i], &tr, &g_out, &mut buf).expect("dims validated");
            for (a, b) in g.iter_mut().zip(&buf) {
                *a += b;
            }
        }
    }
    total * scale
}

/// `(1/B) Σ ‖exp(f(x)) - r²‖²` and its parameter gradient.
pub fn cov_loss_grad(net: &ReluNetwork, xs: &[DVector<f64>], r2: &[DVector<f64>]) -> (f64, Vec<f64>) {
    let idx: Vec<usize> = (0..xs.len()).collect();
    let mut g = vec![0.0; net.num_params()];
    let l = cov_loss_grad_idx(net, xs, r2, &idx, Some(&mut g));
    (l, g)
}

impl Objective for CovObjective<'_> {
    fn params(&self) -> Vec<f64> {
        self.net.params()
    }

    fn set_params(&mut self, p: &[f64]) {
        self.net.set_params(p).expect("fixed layout");
    }

    fn loss_grad(&self, idx: &[usize], grad: &mut [f64]) -> f64 {
        cov_loss_grad_idx(&self.net, self.xs, self.r2, idx, Some(grad))
    }

    fn loss(&self, idx: &[usize]) -> f64 {
        cov_loss_grad_idx(&self.net, self.xs, self.r2, idx, None)
    }
}

struct JointObjective<'a> {
    embedder: ReluNetwork,
    mean: ReluNetwork,
    ss: &'a [DVector<f64>],
    acts: &'a [DVector<f64>],
    ys: &'a [DVector<f64>],
}

fn joint_loss_grad_idx(
    embedder: &ReluNetwork,
    mean: &ReluNetwork,
    ss: &[DVector<f64>],
    acts: &[DVector<f64>],
    ys: &[DVector<f64>],
    idx: &[usize],
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let scale = 1.0 / idx.len() as f64;
    let ne = embedder.num_params();
    let e_dim = embedder.output_dim();
    let mut total = 0.0;
    let mut buf_e = Vec::new();
    let mut buf_m = Vec::new();
    for &i in idx {
        let te = embedder.forward_trace(&ss[i]).expect("dims validated");
        let x = concat(&te.output, &acts[i]);
        let tm = mean.forward_trace(&x).expect("dims validated");
        let diff = &tm.output - &ys[i];
        total += diff.norm_squared();
        if let Some(g) = grad.as_deref_mut() {
            let g_x = mean.backward_into(&x, &tm, &(diff * (2.0 * scale)), &mut buf_m).expect("dims validated");
            let g_e = g_x.rows(0, e_dim).into_owned();
            embedder.backward_into(&ss[i], &te, &g_e, &mut buf_e).expect("dims validated");
            for (a, b) in g[..ne].iter_mut().zip(&buf_e) {
                *a += b;
            }
            for (a, b) in g[ne..].iter_mut().zip(&buf_m) {
                *a += b;
            }
        }
    }
    total * scale
}

/// Loss of the composed `mean(embedder(s), a)`; gradient layout is embedder
/// parameters followed by mean-network parameters.
pub fn joint_loss_grad(
    embedder: &ReluNetwork,
    mean: &ReluNetwork,
    ss: &[DVector<f64>],
    acts: &[DVector<f64>],
    ys: &[DVector<f64>],
) -> (f64, Vec<f64>) {
    let idx: Vec<usize> = (0..ss.len()).collect();
    let mut g = vec![0.0; embedder.num_params() + mean.num_params()];
    let l = joint_loss_grad_idx(embedder, mean, ss, acts, ys, &idx, Some(&mut g));
    (l, g)
}

impl Objective for JointObjective<'_> {
    fn params(&self) -> Vec<f64> {
        let mut p = self.embedder.params();
        p.extend(self.mean.params());
        p
    }

    fn set_params(&mut self, p: &[f64]) {
        let ne = self.embedder.num_params();
        self.embedder.set_params(&p[..ne]).expect("fixed layout");
        self.mean.set_params(&p[ne..]).expect("fixed layout");
    }

    fn loss_grad(&self, idx: &[usize], grad: &mut [f64]) -> f64 {
        joint_loss_grad_idx(&self.embedder, &self.mean, self.ss, self.acts, self.ys, idx, Some(grad))
    }

    fn loss(&self, idx: &[usize]) -> f64 {
        joint_loss_grad_idx(&self.embedder, &self.mean, self.ss, self.acts, self.ys, idx, None)
    }
}

fn check_data(data: &[Transition]) -> Result<(usize, usize)> {
    let first = data.first().ok_or(Error::EmptyData)?;
    let (n, m) = (first.s.len(), first.a.len());
    for t in data {
        check_dim(n, t.s.len())?;
        check_dim(m, t.a.len())?;
        check_dim(n, t.sp.len())?;
    }
    Ok((n, m))
}

fn init_rng(cfg: &TrainConfig, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    rng
}

/// Fits `μ(s, a) ≈ s'` by minimizing the mean squared prediction error.
pub fn train_mean(data: &[Transition], arch: &Architecture, cfg: &TrainConfig) -> Result<(ReluNetwork, TrainReport)> {
    let (n, m) = check_data(data)?;
    cfg.validate()?;
    let raw_x: Vec<DVector<f64>> = data.iter().map(Transition::input).collect();
    let raw_y: Vec<DVector<f64>> = data.iter().map(|t| t.sp.clone()).collect();
    let sx = Standardizer::fit(&raw_x)?;
    let sy = Standardizer::fit(&raw_y)?;
    let xs: Vec<DVector<f64>> = raw_x.iter().map(|x| sx.apply(x)).collect();
    let ys: Vec<DVector<f64>> = raw_y.iter().map(|y| sy.apply(y)).collect();
    let mut rng = init_rng(cfg, 1);
    let mut net = ReluNetwork::random(&arch.dims(n + m, n), arch.activation, arch.linear_skip, &mut rng)?;
    if arch.linear_skip {
        init_skip(&mut net, &xs, &ys);
    }
    let mut obj = MeanObjective { net, xs: &xs, ys: &ys };
    let report = fit(&mut obj, xs.len(), cfg)?;
    let (t, c) = sx.forward_affine();
    let (s, d) = sy.inverse_affine();
    let net = obj.net.with_input_affine(&t, &c)?.with_output_affine(&s, &d)?;
    Ok((net, report))
}

/// Fits per-coordinate log-variances of the residual `s' - μ(s, a)`.
pub fn train_cov(data: &[Transition], mean_net: &ReluNetwork, arch: &Architecture, cfg: &TrainConfig) -> Result<(ReluNetwork, TrainReport)> {
    let (n, m) = check_data(data)?;
    check_dim(n + m, mean_net.input_dim())?;
    cfg.validate()?;
    let mut r2 = Vec::with_capacity(data.len());
    for t in data {
        let r = &t.sp - mean_net.forward(&t.input())?;
        r2.push(r.map(|e| e * e));
    }
    fit_cov(data, r2, n, m, arch, cfg)
}

/// [`train_cov`] for an embedded surrogate; the covariance net still reads the raw `(s, a)`.
pub fn train_cov_embedded(
    data: &[Transition],
    embedder: &ReluNetwork,
    mean_net: &ReluNetwork,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(ReluNetwork, TrainReport)> {
    let (n, m) = check_data(data)?;
    check_dim(n, embedder.input_dim())?;
    check_dim(embedder.output_dim() + m, mean_net.input_dim())?;
    cfg.validate()?;
    let mut r2 = Vec::with_capacity(data.len());
    for t in data {
        let r = &t.sp - mean_net.forward(&concat(&embedder.forward(&t.s)?, &t.a))?;
        r2.push(r.map(|e| e * e));
    }
    fit_cov(data, r2, n, m, arch, cfg)
}

fn fit_cov(
    data: &[Transition],
    r2: Vec<DVector<f64>>,
    n: usize,
    m: usize,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(ReluNetwork, TrainReport)> {
    let raw_x: Vec<DVector<f64>> = data.iter().map(Transition::input).collect();
    // per-coordinate variance scale, restored through the output bias
    let mut level = DVector::<f64>::zeros(n);
    for r in &r2 {
        level += r;
    }
    level = (level / r2.len() as f64).map(|v| v.max(1e-300));
    let r2n: Vec<DVector<f64>> = r2.iter().map(|r| r.component_div(&level)).collect();
    let sx = Standardizer::fit(&raw_x)?;
    let xs: Vec<DVector<f64>> = raw_x.iter().map(|x| sx.apply(x)).collect();
    let mut rng = init_rng(cfg, 2);
    let mut net = ReluNetwork::random(&arch.dims(n + m, n), arch.activation, false, &mut rng)?;
    {
        // start from a small output so exp(o) ≈ 1 (the mean level)
        let mut p = net.params();
        let last = net.weights().len() - 1;
        let off: usize = (0..last).map(|i| net.weights()[i].len() + net.biases()[i].len()).sum();
        for v in &mut p[off..off + net.weights()[last].len()] {
            *v *= 0.1;
        }
        net.set_params(&p)?;
    }
    let mut obj = CovObjective { net, xs: &xs, r2: &r2n };
    let report = fit(&mut obj, xs.len(), cfg)?;
    let (t, c) = sx.forward_affine();
    let log_level = level.map(libm::log);
    let net = obj.net.with_input_affine(&t, &c)?.with_output_affine(&DMatrix::identity(n, n), &log_level)?;
    Ok((net, report))
}

/// Diagonal covariance `diag(exp(f(x)))` from a log-variance network.
pub fn predicted_covariance(cov_net: &ReluNetwork, input: &DVector<f64>) -> Result<DMatrix<f64>> {
    let o = cov_net.forward(input)?;
    Ok(DMatrix::from_diagonal(&o.map(libm::exp)))
}

/// Jointly fits a tanh embedder `s ↦ e` and a mean network `(e, a) ↦ s'`.
///
/// `embedder_hidden` and `mean` describe the hidden layers; the embedding
/// width is `embed_dim`.
pub fn train_joint_embedded(
    data: &[Transition],
    embedder_hidden: &[usize],
    embed_dim: usize,
    mean: &Architecture,
    cfg: &TrainConfig,
) -> Result<(ReluNetwork, ReluNetwork, TrainReport)> {
    let (n, m) = check_data(data)?;
    cfg.validate()?;
    let raw_s: Vec<DVector<f64>> = data.iter().map(|t| t.s.clone()).collect();
    let raw_a: Vec<DVector<f64>> = data.iter().map(|t| t.a.clone()).collect();
    let raw_y: Vec<DVector<f64>> = data.iter().map(|t| t.sp.clone()).collect();
    let ss_std = Standardizer::fit(&raw_s)?;
    let sa_std = Standardizer::fit(&raw_a)?;
    let sy = Standardizer::fit(&raw_y)?;
    let ss: Vec<DVector<f64>> = raw_s.iter().map(|x| ss_std.apply(x)).collect();
    let acts: Vec<DVector<f64>> = raw_a.iter().map(|x| sa_std.apply(x)).collect();
    let ys: Vec<DVector<f64>> = raw_y.iter().map(|y| sy.apply(y)).collect();

    let mut rng = init_rng(cfg, 3);
    let mut edims = vec![n];
    edims.extend(embedder_hidden);
    edims.push(embed_dim);
    let embedder = ReluNetwork::random(&edims, Activation::Tanh, false, &mut rng)?;
    let mut mean_net = ReluNetwork::random(&mean.dims(embed_dim + m, n), mean.activation, mean.linear_skip, &mut rng)?;
    if mean.linear_skip {
        let xs: Vec<DVector<f64>> = ss
            .iter()
            .zip(&acts)
            .map(|(s, a)| concat(&embedder.forward(s).expect("dims"), a))
            .collect();
        init_skip(&mut mean_net, &xs, &ys);
    }
    let mut obj = JointObjective { embedder, mean: mean_net, ss: &ss, acts: &acts, ys: &ys };
    let report = fit(&mut obj, ss.len(), cfg)?;
    let (t, c) = ss_std.forward_affine();
    let embedder = obj.embedder.with_input_affine(&t, &c)?;
    let input_std = Standardizer::identity(embed_dim).concat(&sa_std);
    let (t, c) = input_std.forward_affine();
    let (s, d) = sy.inverse_affine();
    let mean_net = obj.mean.with_input_affine(&t, &c)?.with_output_affine(&s, &d)?;
    Ok((embedder, mean_net, report))
}

/// Root-mean-square prediction error per coordinate, in raw units.
pub fn rmse(net: &ReluNetwork, data: &[Transition]) -> Result<f64> {
    let (n, _) = check_data(data)?;
    let mut total = 0.0;
    for t in data {
        total += (net.forward(&t.input())? - &t.sp).norm_squared();
    }
    Ok(libm::sqrt(total / (data.len() * n) as f64))
}

/// RMSE of the composed embedder + mean network.
pub fn rmse_embedded(embedder: &ReluNetwork, mean: &ReluNetwork, data: &[Transition]) -> Result<f64> {
    let (n, _) = check_data(data)?;
    let mut total = 0.0;
    for t in data {
        let x = concat(&embedder.forward(&t.s)?, &t.a);
        total += (mean.forward(&x)? - &t.sp).norm_squared();
    }
    Ok(libm::sqrt(total / (data.len() * n) as f64))
}
