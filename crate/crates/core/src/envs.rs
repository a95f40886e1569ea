//! Train/deploy environment pairs, baseline policies, reference trajectories
//! and transition collection.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use crate::error::{check_dim, Error, Result};
use crate::gauss::standard_normal_vector;
use crate::train::Transition;

/// How additive process noise is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Sampled,
    /// Noise replaced by its mean (used for reference trajectories).
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Dubins,
    LinearCar,
    Acc,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Dubins => "dubins",
            EnvKind::LinearCar => "linear_car",
            EnvKind::Acc => "acc",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "dubins" => Some(EnvKind::Dubins),
            "linear_car" => Some(EnvKind::LinearCar),
            "acc" => Some(EnvKind::Acc),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Train,
    Deploy,
}

/// A stateful simulated system with a box action space.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn lower(&self) -> DVector<f64>;
    fn upper(&self) -> DVector<f64>;
    fn dt(&self) -> f64;
    fn observe(&self) -> DVector<f64>;
    /// Restores the configured initial condition.
    fn reset(&mut self) -> DVector<f64>;
    /// Draws an initial condition from the sampler ι.
    fn reset_random(&mut self, rng: &mut dyn RngCore) -> DVector<f64>;
    fn step(&mut self, action: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>>;
    fn set_noise_mode(&mut self, mode: NoiseMode);
    fn noise_mode(&self) -> NoiseMode;
    /// Relative distance to a lead vehicle, where the model has one.
    fn gap(&self) -> Option<f64> {
        None
    }
}

/// Deterministic state-feedback policy; `t` indexes time-varying plans.
pub trait Policy {
    fn act(&self, t: usize, s: &DVector<f64>) -> DVector<f64>;
}

pub fn clip(a: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(a.len(), |i, _| a[i].clamp(lo[i], hi[i]))
}

// ---------------------------------------------------------------- Dubins

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DubinsParams {
    pub length: f64,
    pub speed: f64,
    pub dt: f64,
    pub phi_max: f64,
    pub noise_std: f64,
}

impl DubinsParams {
    pub fn train() -> Self {
        Self { length: 2.5, speed: 4.9, dt: 0.01, phi_max: 0.6, noise_std: 0.0 }
    }

    pub fn deploy() -> Self {
        Self { length: 2.1, speed: 5.1, ..Self::train() }
    }
}

/// One Euler step of the kinematic car on `(x, y, sinθ, cosθ)`.
pub fn dubins_step(state: &DVector<f64>, phi: f64, p: &DubinsParams, noise: Option<&DVector<f64>>) -> DVector<f64> {
    let phi = phi.clamp(-p.phi_max, p.phi_max);
    let (x, y, s, c) = (state[0], state[1], state[2], state[3]);
    let turn = p.speed / p.length * libm::tan(phi);
    let mut next = DVector::from_vec(alloc::vec![
        x + p.dt * p.speed * c,
        y + p.dt * p.speed * s,
        s + p.dt * turn * c,
        c - p.dt * turn * s,
    ]);
    if let Some(w) = noise {
        next += w;
    }
    let r = libm::hypot(next[2], next[3]);
    next[2] /= r;
    next[3] /= r;
    next
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dubins {
    pub params: DubinsParams,
    pub initial: DVector<f64>,
    state: DVector<f64>,
    mode: NoiseMode,
}

impl Dubins {
    pub fn new(params: DubinsParams) -> Self {
        let initial = DVector::from_vec(alloc::vec![0.0, 0.0, 0.0, 1.0]);
        Self { params, state: initial.clone(), initial, mode: NoiseMode::Sampled }
    }
}

impl Environment for Dubins {
    fn state_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn lower(&self) -> DVector<f64> {
        DVector::from_element(1, -self.params.phi_max)
    }

    fn upper(&self) -> DVector<f64> {
        DVector::from_element(1, self.params.phi_max)
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn observe(&self) -> DVector<f64> {
        self.state.clone()
    }

    fn reset(&mut self) -> DVector<f64> {
        self.state = self.initial.clone();
        self.observe()
    }

    fn reset_random(&mut self, rng: &mut dyn RngCore) -> DVector<f64> {
        let th = rng.random_range(-0.3..0.3);
        self.state = DVector::from_vec(alloc::vec![
            self.initial[0] + rng.random_range(-0.5..0.5),
            self.initial[1] + rng.random_range(-0.5..0.5),
            libm::sin(th),
            libm::cos(th),
        ]);
        self.observe()
    }

    fn step(&mut self, action: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        check_dim(1, action.len())?;
        let noise = (self.params.noise_std > 0.0 && self.mode == NoiseMode::Sampled)
            .then(|| standard_normal_vector(4, rng) * self.params.noise_std);
        self.state = dubins_step(&self.state, action[0], &self.params, noise.as_ref());
        Ok(self.observe())
    }

    fn set_noise_mode(&mut self, mode: NoiseMode) {
        self.mode = mode;
    }

    fn noise_mode(&self) -> NoiseMode {
        self.mode
    }
}

/// Reference geometry for the steering law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DubinsPath {
    /// Straight line through `(x, y)` with heading `theta`.
    Line { x: f64, y: f64, theta: f64 },
    /// Counter-clockwise circle.
    Circle { cx: f64, cy: f64, radius: f64 },
}

/// Stanley-type path tracker with curvature feedforward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StanleyPolicy {
    pub path: DubinsPath,
    pub gain: f64,
    pub length: f64,
    pub speed: f64,
    pub phi_max: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = libm::fmod(a + PI, 2.0 * PI);
    if a < 0.0 {
        a += 2.0 * PI;
    }
    a - PI
}

impl StanleyPolicy {
    pub fn new(path: DubinsPath, p: &DubinsParams) -> Self {
        Self { path, gain: 2.0, length: p.length, speed: p.speed, phi_max: p.phi_max }
    }

    /// Signed cross-track error (positive to the right of the path), path heading and curvature.
    fn geometry(&self, x: f64, y: f64) -> (f64, f64, f64) {
        match self.path {
            DubinsPath::Line { x: px, y: py, theta } => {
                let (s, c) = (libm::sin(theta), libm::cos(theta));
                let e = (x - px) * s - (y - py) * c;
                (e, theta, 0.0)
            }
            DubinsPath::Circle { cx, cy, radius } => {
                let (dx, dy) = (x - cx, y - cy);
                let e = libm::hypot(dx, dy) - radius;
                (e, libm::atan2(dy, dx) + PI / 2.0, 1.0 / radius)
            }
        }
    }
}

impl Policy for StanleyPolicy {
    fn act(&self, _t: usize, s: &DVector<f64>) -> DVector<f64> {
        let theta = libm::atan2(s[2], s[3]);
        let (e, heading, kappa) = self.geometry(s[0], s[1]);
        let phi = libm::atan(self.length * kappa) + wrap_angle(heading - theta) + libm::atan(self.gain * e / self.speed);
        DVector::from_element(1, phi.clamp(-self.phi_max, self.phi_max))
    }
}

// ------------------------------------------------------------ linear car

#[derive(Debug, Clone, PartialEq)]
pub struct LinearCarParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub noise_mean: DVector<f64>,
    pub noise_cov: DMatrix<f64>,
    pub dt: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl LinearCarParams {
    pub fn train() -> Self {
        Self {
            a: DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0047, 0.0, 1.0, 0.0906, 0.0, 0.0, 0.8187]),
            b: DMatrix::from_column_slice(3, 1, &[0.003, 0.0094, 0.1813]),
            noise_mean: DVector::from_vec(alloc::vec![0.0, 0.0, 0.2]),
            noise_cov: DMatrix::identity(3, 3) * libm::exp(-8.0),
            dt: 0.1,
            u_min: -3.0,
            u_max: 3.0,
        }
    }

    pub fn deploy() -> Self {
        Self {
            a: DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0046, 0.0, 1.0, 0.0885, 0.0, 0.0, 0.7788]),
            b: DMatrix::from_column_slice(3, 1, &[0.004, 0.0115, 0.2212]),
            noise_mean: DVector::zeros(3),
            ..Self::train()
        }
    }
}

/// `x' = A x + B clip(u) + w`; `w` is the noise draw (use the mean for nominal steps).
pub fn linear_step(x: &DVector<f64>, u: f64, p: &LinearCarParams, w: &DVector<f64>) -> DVector<f64> {
    let u = u.clamp(p.u_min, p.u_max);
    &p.a * x + &p.b * u + w
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearCar {
    pub params: LinearCarParams,
    pub initial: DVector<f64>,
    noise_factor: DMatrix<f64>,
    state: DVector<f64>,
    mode: NoiseMode,
}

impl LinearCar {
    pub fn new(params: LinearCarParams) -> Result<Self> {
        let chol = params
            .noise_cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPsd { min_eigenvalue: params.noise_cov.symmetric_eigenvalues().min() })?;
        Ok(Self { noise_factor: chol.l(), params, initial: DVector::zeros(3), state: DVector::zeros(3), mode: NoiseMode::Sampled })
    }

    pub fn set_state(&mut self, s: &DVector<f64>) -> Result<()> {
        check_dim(3, s.len())?;
        self.state = s.clone();
        Ok(())
    }
}

impl Environment for LinearCar {
    fn state_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn lower(&self) -> DVector<f64> {
        DVector::from_element(1, self.params.u_min)
    }

    fn upper(&self) -> DVector<f64> {
        DVector::from_element(1, self.params.u_max)
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn observe(&self) -> DVector<f64> {
        self.state.clone()
    }

    fn reset(&mut self) -> DVector<f64> {
        self.state = self.initial.clone();
        self.observe()
    }

    fn reset_random(&mut self, rng: &mut dyn RngCore) -> DVector<f64> {
        self.state = DVector::from_vec(alloc::vec![
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-1.5..1.5),
        ]);
        self.observe()
    }

    fn step(&mut self, action: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        check_dim(1, action.len())?;
        let w = match self.mode {
            NoiseMode::Mean => self.params.noise_mean.clone(),
            NoiseMode::Sampled => &self.params.noise_mean + &self.noise_factor * standard_normal_vector(3, rng),
        };
        self.state = linear_step(&self.state, action[0], &self.params, &w);
        Ok(self.observe())
    }

    fn set_noise_mode(&mut self, mode: NoiseMode) {
        self.mode = mode;
    }

    fn noise_mode(&self) -> NoiseMode {
        self.mode
    }
}

/// Gain of the infinite-horizon discrete LQR, `u = −K x`, by Riccati iteration.
pub fn dlqr(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    for _ in 0..100_000 {
        let s = r + b.transpose() * &p * b;
        let k = s.clone().cholesky().ok_or(Error::IllConditioned { eigenvalue: 0.0 })?.solve(&(b.transpose() * &p * a));
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        let next = (&next + next.transpose()) * 0.5;
        let diff = (&next - &p).amax();
        p = next;
        if diff <= 1e-12 * p.amax().max(1.0) {
            return Ok(k);
        }
    }
    Err(Error::Domain("Riccati iteration did not converge".into()))
}

/// LQR tracking of a nominal plan `(x_ref, u_ff)` feasible for the training model.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrTracker {
    pub gain: DMatrix<f64>,
    pub plan: Vec<DVector<f64>>,
    pub feedforward: Vec<f64>,
    pub u_min: f64,
    pub u_max: f64,
}

impl LqrTracker {
    /// Plan driven by `u_ff(k) = −c₃/B₃ + amp·sin(2π k dt / period)`, which cancels the mean acceleration bias.
    pub fn new(p: &LinearCarParams, horizon: usize, amplitude: f64, period: f64) -> Result<Self> {
        let q = DMatrix::from_diagonal(&DVector::from_vec(alloc::vec![10.0, 1.0, 0.1]));
        let r = DMatrix::identity(1, 1) * 0.1;
        let gain = dlqr(&p.a, &p.b, &q, &r)?;
        let bias = -p.noise_mean[2] / p.b[(2, 0)];
        let mut plan = Vec::with_capacity(horizon + 1);
        let mut feedforward = Vec::with_capacity(horizon + 1);
        let mut x = DVector::zeros(3);
        for k in 0..=horizon {
            let u = (bias + amplitude * libm::sin(2.0 * PI * k as f64 * p.dt / period)).clamp(p.u_min, p.u_max);
            plan.push(x.clone());
            feedforward.push(u);
            x = linear_step(&x, u, p, &p.noise_mean);
        }
        Ok(Self { gain, plan, feedforward, u_min: p.u_min, u_max: p.u_max })
    }

    /// Spectral radius of `A − B K`.
    pub fn closed_loop_radius(&self, p: &LinearCarParams) -> f64 {
        let acl = &p.a - &p.b * &self.gain;
        acl.complex_eigenvalues().iter().map(|z| libm::hypot(z.re, z.im)).fold(0.0, f64::max)
    }
}

impl Policy for LqrTracker {
    fn act(&self, t: usize, s: &DVector<f64>) -> DVector<f64> {
        let k = t.min(self.plan.len() - 1);
        let u = self.feedforward[k] - (&self.gain * (s - &self.plan[k]))[0];
        DVector::from_element(1, u.clamp(self.u_min, self.u_max))
    }
}

// ------------------------------------------------------------------- ACC

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccParams {
    pub v_set: f64,
    pub d_default: f64,
    pub t_gap: f64,
    /// First-order lag time constant of the ego acceleration (s).
    pub lag: f64,
    pub dt: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub lead_amplitude: f64,
    pub lead_period: f64,
    pub x_lead0: f64,
    pub v_lead0: f64,
    pub x_ego0: f64,
    pub v_ego0: f64,
    pub noise_std: f64,
}

impl AccParams {
    pub fn train() -> Self {
        Self {
            v_set: 30.0,
            d_default: 10.0,
            t_gap: 1.4,
            lag: 0.5,
            dt: 0.1,
            a_min: -3.0,
            a_max: 2.0,
            lead_amplitude: 0.6,
            lead_period: 40.0,
            x_lead0: 50.0,
            v_lead0: 25.0,
            x_ego0: 10.0,
            v_ego0: 20.0,
            noise_std: 0.0,
        }
    }

    pub fn deploy() -> Self {
        Self { v_set: 34.5, ..Self::train() }
    }
}

/// Full simulator state; the observation is `(∫v_err, v_err, v_ego)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccState {
    pub x_ego: f64,
    pub v_ego: f64,
    pub a_ego: f64,
    pub x_lead: f64,
    pub v_lead: f64,
    pub time: f64,
    pub int_err: f64,
    pub v_err: f64,
}

impl AccState {
    pub fn d_rel(&self) -> f64 {
        self.x_lead - self.x_ego
    }

    pub fn observation(&self) -> DVector<f64> {
        DVector::from_vec(alloc::vec![self.int_err, self.v_err, self.v_ego])
    }
}

/// Safe distance and the speed the spacing logic asks for.
pub fn acc_target_speed(st: &AccState, p: &AccParams) -> f64 {
    let d_safe = p.d_default + p.t_gap * st.v_ego;
    if st.d_rel() >= d_safe {
        p.v_set
    } else {
        p.v_set.min(st.v_lead)
    }
}

/// One step of the simplified longitudinal model.
pub fn acc_step(st: &AccState, u: f64, p: &AccParams, noise: f64) -> AccState {
    let u = u.clamp(p.a_min, p.a_max);
    let k = p.dt / p.lag;
    let a_ego = (st.a_ego + k * u) / (1.0 + k) + noise;
    let v_ego = (st.v_ego + a_ego * p.dt).max(0.0);
    let x_ego = st.x_ego + v_ego * p.dt;
    let a_lead = p.lead_amplitude * libm::sin(2.0 * PI * st.time / p.lead_period);
    let v_lead = (st.v_lead + a_lead * p.dt).max(0.0);
    let x_lead = st.x_lead + v_lead * p.dt;
    let mut next = AccState { x_ego, v_ego, a_ego, x_lead, v_lead, time: st.time + p.dt, int_err: st.int_err, v_err: 0.0 };
    next.v_err = acc_target_speed(&next, p) - next.v_ego;
    next.int_err += next.v_err * p.dt;
    next
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acc {
    pub params: AccParams,
    state: AccState,
    mode: NoiseMode,
}

impl Acc {
    pub fn new(params: AccParams) -> Self {
        let mut env = Self { params, state: Self::initial_state(&params, 0.0), mode: NoiseMode::Sampled };
        env.reset();
        env
    }

    fn initial_state(p: &AccParams, time: f64) -> AccState {
        let mut st = AccState {
            x_ego: p.x_ego0,
            v_ego: p.v_ego0,
            a_ego: 0.0,
            x_lead: p.x_lead0,
            v_lead: p.v_lead0,
            time,
            int_err: 0.0,
            v_err: 0.0,
        };
        st.v_err = acc_target_speed(&st, p) - st.v_ego;
        st
    }

    pub fn state(&self) -> &AccState {
        &self.state
    }

    pub fn set_full_state(&mut self, st: AccState) {
        self.state = st;
    }
}

impl Environment for Acc {
    fn state_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn lower(&self) -> DVector<f64> {
        DVector::from_element(1, self.params.a_min)
    }

    fn upper(&self) -> DVector<f64> {
        DVector::from_element(1, self.params.a_max)
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn observe(&self) -> DVector<f64> {
        self.state.observation()
    }

    fn reset(&mut self) -> DVector<f64> {
        self.state = Self::initial_state(&self.params, 0.0);
        self.observe()
    }

    fn reset_random(&mut self, rng: &mut dyn RngCore) -> DVector<f64> {
        let p = AccParams {
            x_ego0: rng.random_range(0.0..30.0),
            v_ego0: rng.random_range(15.0..35.0),
            v_lead0: rng.random_range(18.0..32.0),
            ..self.params
        };
        let t0 = rng.random_range(0.0..self.params.lead_period);
        let mut st = Self::initial_state(&p, t0);
        st.a_ego = rng.random_range(-1.0..1.0);
        st.int_err = rng.random_range(-10.0..10.0);
        self.state = st;
        self.observe()
    }

    fn step(&mut self, action: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        check_dim(1, action.len())?;
        let noise = if self.params.noise_std > 0.0 && self.mode == NoiseMode::Sampled {
            standard_normal_vector(1, rng)[0] * self.params.noise_std
        } else {
            0.0
        };
        self.state = acc_step(&self.state, action[0], &self.params, noise);
        Ok(self.observe())
    }

    fn set_noise_mode(&mut self, mode: NoiseMode) {
        self.mode = mode;
    }

    fn noise_mode(&self) -> NoiseMode {
        self.mode
    }

    fn gap(&self) -> Option<f64> {
        Some(self.state.d_rel())
    }
}

/// PI law on the speed error, clipped to the actuator range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccPi {
    pub kp: f64,
    pub ki: f64,
    pub a_min: f64,
    pub a_max: f64,
}

impl AccPi {
    pub fn new(p: &AccParams) -> Self {
        Self { kp: 0.5, ki: 0.1, a_min: p.a_min, a_max: p.a_max }
    }
}

impl Policy for AccPi {
    fn act(&self, _t: usize, s: &DVector<f64>) -> DVector<f64> {
        let u = self.kp * s[1] + self.ki * s[0];
        DVector::from_element(1, u.clamp(self.a_min, self.a_max))
    }
}

// --------------------------------------------------------------- factory

/// Radius of the default Dubins reference circle (m).
pub const DUBINS_RADIUS: f64 = 8.0;

/// Plan length of the default linear-car tracker (steps).
pub const LINEAR_PLAN_STEPS: usize = 5000;

pub fn make_env(kind: EnvKind, variant: Variant) -> Result<Box<dyn Environment>> {
    Ok(match (kind, variant) {
        (EnvKind::Dubins, Variant::Train) => Box::new(Dubins::new(DubinsParams::train())),
        (EnvKind::Dubins, Variant::Deploy) => Box::new(Dubins::new(DubinsParams::deploy())),
        (EnvKind::LinearCar, Variant::Train) => Box::new(LinearCar::new(LinearCarParams::train())?),
        (EnvKind::LinearCar, Variant::Deploy) => Box::new(LinearCar::new(LinearCarParams::deploy())?),
        (EnvKind::Acc, Variant::Train) => Box::new(Acc::new(AccParams::train())),
        (EnvKind::Acc, Variant::Deploy) => Box::new(Acc::new(AccParams::deploy())),
    })
}

/// Baseline policy designed on the training parameters.
pub fn make_pi_star(kind: EnvKind) -> Result<Box<dyn Policy>> {
    Ok(match kind {
        EnvKind::Dubins => Box::new(StanleyPolicy::new(
            DubinsPath::Circle { cx: 0.0, cy: DUBINS_RADIUS, radius: DUBINS_RADIUS },
            &DubinsParams::train(),
        )),
        EnvKind::LinearCar => Box::new(LqrTracker::new(&LinearCarParams::train(), LINEAR_PLAN_STEPS, 1.5, 5.0)?),
        EnvKind::Acc => Box::new(AccPi::new(&AccParams::train())),
    })
}

/// Closed-loop trajectory `[s₀, …, s_T]` under `pi` with noise at its mean.
pub fn sample_reference(env: &mut dyn Environment, pi: &dyn Policy, horizon: usize) -> Result<Vec<DVector<f64>>> {
    let mode = env.noise_mode();
    env.set_noise_mode(NoiseMode::Mean);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut s = env.reset();
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(s.clone());
    let result = (|| {
        for t in 0..horizon {
            s = env.step(&pi.act(t, &s), &mut rng)?;
            out.push(s.clone());
        }
        Ok(())
    })();
    env.set_noise_mode(mode);
    result.map(|_| out)
}

/// Excitation used for dataset collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Excitation {
    /// Dither half-width as a fraction of the actuator range width.
    pub dither: f64,
    /// Steps per rollout before re-sampling the initial condition.
    pub rollout: usize,
}

impl Default for Excitation {
    fn default() -> Self {
        Self { dither: 1.0, rollout: 200 }
    }
}

/// `count` transitions under `π* + uniform dither` from rollouts started by ι.
pub fn collect_transitions(
    env: &mut dyn Environment,
    pi: &dyn Policy,
    excitation: &Excitation,
    count: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Transition>> {
    let (lo, hi) = (env.lower(), env.upper());
    let width = &hi - &lo;
    let rollout = excitation.rollout.max(1);
    let mut out = Vec::with_capacity(count);
    let mut s = env.reset_random(rng);
    let mut t = 0;
    while out.len() < count {
        if t == rollout {
            s = env.reset_random(rng);
            t = 0;
        }
        let base = pi.act(t, &s);
        let dither = DVector::from_fn(base.len(), |i, _| {
            let w = excitation.dither * width[i];
            if w > 0.0 {
                rng.random_range(-w..w)
            } else {
                0.0
            }
        });
        let a = clip(&(base + dither), &lo, &hi);
        let sp = env.step(&a, rng)?;
        out.push(Transition { s: s.clone(), a, sp: sp.clone() });
        s = sp;
        t += 1;
    }
    Ok(out)
}
