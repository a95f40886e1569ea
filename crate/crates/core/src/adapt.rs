//! Convex action adaptation, the precautionary comparison and the closed loop.
//!
//! The action block of the quadratic-constraint LMI uses the substitution
//! `U = τ₂ Ω_a⁻¹`, `V = τ₂ Ω_a⁻¹ μ_a` with the term `−Vᵀ U⁻¹ V` dropped,
//! which makes the program jointly convex in `(Ω, U, V, τ₁, τ₂, λ, ν, η)`.
//!
//! Actions are written as `a = a₀ + H d` with an anchor `a₀` and the
//! half-range scaling `H`; `U` and `V` live in `d` coordinates. Because the
//! relaxed action set always contains `d = 0`, the program is re-solved
//! around each recovered action. Each re-solve is the affine minorant of the
//! dropped term taken at the previous action.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::conic::{Bounds, ConicProgram, ConicSolver, LinExpr, MatVar, SolveStatus, SolverSettings, VarId};
use crate::deep_sdp::{
    build_layout, m_out_expr, m_phi_expr, normalized_residual_net, output_map, status_error, unit_ball_qc, MultiplierVars,
    QcMultipliers,
};
use crate::envs::{clip, Environment, Policy};
use crate::error::{check_dim, Error, Result};
use crate::gauss::Ellipsoid;
use crate::pso::{pso_adapt_step, PsoConfig};
use crate::relu::ReluNetwork;
use crate::surrogate::SurrogatePair;
use crate::train::concat;

/// Where the deviation coordinates are centered.
#[derive(Debug, Clone, PartialEq)]
pub enum Anchor {
    /// `a₀ = 0`: the program exactly as stated, in raw action units.
    Origin,
    Given(DVector<f64>),
    /// Projected Gauss-Newton minimizer of `‖target − μ(μ_s, a)‖²`, started
    /// from the given point (or the box center) and the box center.
    Linearized(Option<DVector<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptProblem {
    pub mean_net: ReluNetwork,
    pub state_region: Ellipsoid,
    pub target: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub delta: f64,
    pub trust_floor: f64,
    pub anchor: Anchor,
    /// Extra solves re-anchored at the previous recovered action.
    pub reanchor: usize,
    pub omega_cap: f64,
}

impl AdaptProblem {
    pub fn new(mean_net: ReluNetwork, state_region: Ellipsoid, target: DVector<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        Self {
            mean_net,
            state_region,
            target,
            lower,
            upper,
            delta: 1e-6,
            trust_floor: 1e-8,
            anchor: Anchor::Linearized(None),
            reanchor: 1,
            omega_cap: 1e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_region.dim();
        let m = self.lower.len();
        check_dim(m, self.upper.len())?;
        check_dim(n + m, self.mean_net.input_dim())?;
        check_dim(self.mean_net.output_dim(), self.target.len())?;
        if self.lower.iter().zip(self.upper.iter()).any(|(l, u)| !(l < u)) {
            return Err(Error::Domain("actuator bounds need lower < upper".into()));
        }
        if !(self.delta > 0.0) || !(self.trust_floor > 0.0) || !(self.omega_cap > 0.0) {
            return Err(Error::Domain("δ, trust floor and Ω cap must be positive".into()));
        }
        if let Anchor::Given(a) = &self.anchor {
            check_dim(m, a.len())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptSolution {
    /// `τ₂ Ω_a⁻¹` in deviation coordinates.
    pub u: DMatrix<f64>,
    /// `τ₂ Ω_a⁻¹ μ_a` in deviation coordinates.
    pub v: DVector<f64>,
    pub tau_state: f64,
    pub tau_action: f64,
    pub multipliers: QcMultipliers,
    /// `Ω = Ω_R⁻¹` in raw residual units.
    pub omega: DMatrix<f64>,
    pub log_det_omega: f64,
    pub anchor: DVector<f64>,
    /// Half-range scaling `H` of the deviation coordinates.
    pub action_scale: DVector<f64>,
    /// `a₀ + H U⁻¹ V` before clipping.
    pub unclipped_action: DVector<f64>,
    pub adapted_action: DVector<f64>,
    pub clipped: bool,
    pub solves: usize,
    pub solve_seconds: f64,
}

impl AdaptSolution {
    /// `log det Ω_R`.
    pub fn log_det_bound(&self) -> f64 {
        -self.log_det_omega
    }

    /// Certified action ellipsoid `E(a₀ + H U⁻¹V, H τ₂U⁻¹ H)`.
    pub fn action_region(&self) -> Result<Ellipsoid> {
        let h = DMatrix::from_diagonal(&self.action_scale);
        let uinv = self.u.clone().cholesky().ok_or(Error::IllConditioned { eigenvalue: 0.0 })?.inverse();
        let shape = &h * uinv * self.tau_action * &h;
        Ellipsoid::new(self.unclipped_action.clone(), (&shape + shape.transpose()) * 0.5)
    }

    pub fn residual_bound(&self) -> Result<Ellipsoid> {
        let inv = self.omega.clone().cholesky().ok_or(Error::IllConditioned { eigenvalue: 0.0 })?.inverse();
        Ellipsoid::new(DVector::zeros(self.omega.nrows()), (&inv + inv.transpose()) * 0.5)
    }
}

fn residual(net: &ReluNetwork, s: &DVector<f64>, a: &DVector<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(net.forward(&concat(s, a))? - target)
}

fn gauss_newton(net: &ReluNetwork, s: &DVector<f64>, target: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>, start: DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let m = lo.len();
    let mut a = clip(&start, lo, hi);
    let mut r = residual(net, s, &a, target)?;
    let mut f = r.norm_squared();
    for _ in 0..50 {
        let mut jac = DMatrix::zeros(r.len(), m);
        for i in 0..m {
            let h = 1e-6 * (hi[i] - lo[i]);
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[i] += h;
            am[i] -= h;
            let col = (residual(net, s, &ap, target)? - residual(net, s, &am, target)?) / (2.0 * h);
            jac.set_column(i, &col);
        }
        let g = jac.transpose() * &r;
        // coordinates pinned at a bound with the gradient pushing outward stay fixed
        let free: Vec<usize> = (0..m).filter(|&i| !((a[i] <= lo[i] && g[i] > 0.0) || (a[i] >= hi[i] && g[i] < 0.0))).collect();
        if free.is_empty() {
            break;
        }
        let k = free.len();
        let jf = DMatrix::from_fn(r.len(), k, |row, c| jac[(row, free[c])]);
        let gf = DVector::from_fn(k, |c, _| g[free[c]]);
        let mut hess = jf.transpose() * &jf;
        let ridge = 1e-12 * hess.trace().max(1e-300);
        for d in 0..k {
            hess[(d, d)] += ridge;
        }
        let Some(chol) = hess.cholesky() else { break };
        let step_f = -chol.solve(&gf);
        let mut step = DVector::zeros(m);
        for (c, &i) in free.iter().enumerate() {
            step[i] = step_f[c];
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = clip(&(&a + &step * alpha), lo, hi);
            let rc = residual(net, s, &cand, target)?;
            let fc = rc.norm_squared();
            if fc < f {
                let moved = (&cand - &a).amax();
                a = cand;
                r = rc;
                f = fc;
                accepted = moved > 0.0;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((a, f))
}

/// Projected Gauss-Newton anchor for the region center.
pub fn linearized_anchor(
    net: &ReluNetwork,
    state: &DVector<f64>,
    target: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    start: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let mid = (lower + upper) * 0.5;
    let mut best = gauss_newton(net, state, target, lower, upper, mid)?;
    if let Some(a) = start {
        let other = gauss_newton(net, state, target, lower, upper, a.clone())?;
        if other.1 < best.1 {
            best = other;
        }
    }
    Ok(best.0)
}

struct Program {
    p: ConicProgram,
    omega: MatVar,
    tau_s: VarId,
    tau_a: VarId,
    u: MatVar,
    v: Vec<VarId>,
    mult: MultiplierVars,
}

fn solve_anchored<S: ConicSolver>(solver: &S, settings: &SolverSettings, pr: &AdaptProblem, a0: &DVector<f64>) -> Result<AdaptSolution> {
    let region = &pr.state_region;
    let n = region.dim();
    let m = pr.lower.len();
    let out = pr.mean_net.output_dim();
    let h = (&pr.upper - &pr.lower) * 0.5;
    let mut map = DMatrix::zeros(n + m, n + m);
    map.view_mut((0, 0), (n, n)).copy_from(&region.factor());
    map.view_mut((n, n), (m, m)).copy_from(&DMatrix::from_diagonal(&h));
    let offset = concat(region.center(), a0);
    let (unit_net, scale) = normalized_residual_net(&pr.mean_net, &map, &offset, &pr.target)?;
    let layout = build_layout(&unit_net, n, m)?;
    let len = layout.len();
    let one = layout.one_index();
    let lo = (&pr.lower - a0).component_div(&h);
    let hi = (&pr.upper - a0).component_div(&h);
    let o = output_map(&unit_net, &DVector::zeros(out), &layout)?;

    let build = |cap: f64| -> Result<Program> {
        let mut p = ConicProgram::new();
        let omega = p.add_sym_matrix(out);
        let tau_s = p.add_var(Bounds::NONNEG);
        let tau_a = p.add_var(Bounds::NONNEG);
        let u = p.add_sym_matrix(m);
        let v = p.add_vars(m, Bounds::FREE);
        let (phi, mult) = m_phi_expr(&mut p, &unit_net, &layout, None)?;

        let mut lmi = m_out_expr(&o, &omega);
        lmi.add_term(tau_s, &(-unit_ball_qc(len, layout.s_range())));
        // −E₂ᵀ [−U V; Vᵀ τ₂] E₂
        lmi.add(&u.expr().embedded(len, n));
        for (i, &vi) in v.iter().enumerate() {
            let mut f = DMatrix::zeros(len, len);
            f[(n + i, one)] = -1.0;
            f[(one, n + i)] = -1.0;
            lmi.add_term(vi, &f);
        }
        let mut corner = DMatrix::zeros(len, len);
        corner[(one, one)] = -1.0;
        lmi.add_term(tau_a, &corner);
        lmi.add(&phi.scaled(-1.0));
        p.add_psd(lmi);

        let mut floor = u.expr();
        floor.add_constant(&(DMatrix::identity(m, m) * -pr.trust_floor));
        p.add_psd(floor);
        for i in 0..m {
            let mut lower_row = LinExpr::var(v[i]);
            let mut upper_row = LinExpr::var(v[i]).scaled(-1.0);
            for j in 0..m {
                lower_row = lower_row.term(u.id(i, j), -lo[j]);
                upper_row = upper_row.term(u.id(i, j), hi[j]);
            }
            p.add_ge(lower_row);
            p.add_ge(upper_row);
        }
        let mut trace = LinExpr::var(tau_a);
        for i in 0..m {
            trace = trace.term(u.id(i, i), -pr.delta);
        }
        p.add_ge(trace);

        let mut upper = omega.expr().scaled(-1.0);
        upper.add_constant(&(DMatrix::identity(out, out) * cap));
        p.add_psd(upper);
        p.add_logdet(1.0, omega.expr());
        p.add_linear_objective(&LinExpr::default());
        Ok(Program { p, omega, tau_s, tau_a, u, v, mult })
    };

    let mut prog = build(pr.omega_cap)?;
    let mut res = solver.solve(&prog.p, settings);
    let mut seconds = res.solve_seconds;
    if res.status == SolveStatus::NumericalFailure {
        prog = build(pr.omega_cap * 1e-2)?;
        res = solver.solve(&prog.p, settings);
        seconds += res.solve_seconds;
    }
    if res.status != SolveStatus::Optimal {
        return Err(status_error(res.status, &res.diagnostics));
    }
    let x = res.values.as_deref().expect("optimal result carries values");
    let u = prog.u.value(x);
    let u = (&u + u.transpose()) * 0.5;
    let v = DVector::from_iterator(m, prog.v.iter().map(|id| x[id.0]));
    let d = u.clone().cholesky().ok_or(Error::Backend("returned U is not positive definite".into()))?.solve(&v);
    let unclipped = a0 + h.component_mul(&d);
    let adapted = clip(&unclipped, &pr.lower, &pr.upper);
    let clipped = (&adapted - &unclipped).iter().zip(unclipped.iter()).any(|(dv, uv)| dv.abs() > 1e-9 * (1.0 + uv.abs()));

    let omega_hat = prog.omega.value(x);
    let kinv = DMatrix::from_diagonal(&scale.map(|s| 1.0 / s));
    let omega = &kinv * omega_hat * &kinv;
    let omega = (&omega + omega.transpose()) * 0.5;
    let chol = omega.clone().cholesky().ok_or(Error::Backend("returned Ω is not positive definite".into()))?;
    let log_det_omega = 2.0 * chol.l_dirty().diagonal().iter().map(|d| libm::log(*d)).sum::<f64>();
    Ok(AdaptSolution {
        u,
        v,
        tau_state: x[prog.tau_s.0],
        tau_action: x[prog.tau_a.0],
        multipliers: prog.mult.value(x),
        omega,
        log_det_omega,
        anchor: a0.clone(),
        action_scale: h,
        unclipped_action: unclipped,
        adapted_action: adapted,
        clipped,
        solves: 1,
        solve_seconds: seconds,
    })
}

/// Solves the adaptation program and recovers `â = a₀ + H U⁻¹V`, clipped into the box.
pub fn solve_adaptation<S: ConicSolver>(solver: &S, settings: &SolverSettings, pr: &AdaptProblem) -> Result<AdaptSolution> {
    pr.validate()?;
    let a0 = match &pr.anchor {
        Anchor::Origin => DVector::zeros(pr.lower.len()),
        Anchor::Given(a) => clip(a, &pr.lower, &pr.upper),
        Anchor::Linearized(start) => {
            linearized_anchor(&pr.mean_net, pr.state_region.center(), &pr.target, &pr.lower, &pr.upper, start.as_ref())?
        }
    };
    let mut sol = solve_anchored(solver, settings, pr, &a0)?;
    let tol = 1e-9 * sol.action_scale.max();
    for _ in 0..pr.reanchor {
        let next = sol.adapted_action.clone();
        if (&next - &sol.anchor).amax() <= tol {
            break;
        }
        match solve_anchored(solver, settings, pr, &next) {
            Ok(mut s) => {
                s.solves += sol.solves;
                s.solve_seconds += sol.solve_seconds;
                sol = s;
            }
            Err(_) => break,
        }
    }
    Ok(sol)
}

/// Outcome of the comparison between the π* action and the adapted action.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDecision {
    pub pi_star_action: DVector<f64>,
    pub adapted_action: Option<DVector<f64>>,
    pub pi_star_residual: f64,
    pub adapted_residual: Option<f64>,
    pub chosen: DVector<f64>,
    pub chose_adapted: bool,
    pub log_det_bound: Option<f64>,
}

impl StepDecision {
    pub fn chosen_residual(&self) -> f64 {
        if self.chose_adapted {
            self.adapted_residual.unwrap_or(self.pi_star_residual)
        } else {
            self.pi_star_residual
        }
    }
}

/// Picks the candidate with the smaller comparison-model residual; ties within 1e-12 keep π*.
pub fn select_action(
    surrogate: &SurrogatePair,
    s: &DVector<f64>,
    pi_star_action: &DVector<f64>,
    adapted: Option<&DVector<f64>>,
    target: &DVector<f64>,
) -> Result<StepDecision> {
    let score = |a: &DVector<f64>| -> Result<f64> { Ok((target - surrogate.compare_predict(s, a)?).norm()) };
    let r_pi = score(pi_star_action)?;
    let r_ad = match adapted {
        Some(a) => Some(score(a)?),
        None => None,
    };
    let chose_adapted = matches!(r_ad, Some(r) if r < r_pi - 1e-12);
    let chosen = if chose_adapted { adapted.unwrap().clone() } else { pi_star_action.clone() };
    Ok(StepDecision {
        pi_star_action: pi_star_action.clone(),
        adapted_action: adapted.cloned(),
        pi_star_residual: r_pi,
        adapted_residual: r_ad,
        chosen,
        chose_adapted,
        log_det_bound: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    /// Unadapted run: the π* action.
    PiStar,
    /// First adapted step, which always applies π*.
    Initial,
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
    Pso,
}

impl StepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StepStatus::PiStar => "pi_star",
            StepStatus::Initial => "initial",
            StepStatus::Optimal => "optimal",
            StepStatus::Infeasible => "infeasible",
            StepStatus::Unbounded => "unbounded",
            StepStatus::NumericalFailure => "numerical_failure",
            StepStatus::Pso => "pso",
        }
    }

    fn from_error(e: &Error) -> Self {
        match e {
            Error::Certification(s) if s == SolveStatus::Infeasible.as_str() => StepStatus::Infeasible,
            Error::Certification(s) if s == SolveStatus::Unbounded.as_str() => StepStatus::Unbounded,
            _ => StepStatus::NumericalFailure,
        }
    }
}

/// One row of an episode; the residual is the one produced by `action`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// `τ_opt(t)`.
    pub reference: DVector<f64>,
    /// Observed `s_t`.
    pub state: DVector<f64>,
    pub action: DVector<f64>,
    /// `‖τ_opt(t+1) − s_{t+1}‖`.
    pub residual_norm: f64,
    pub log_det_bound: Option<f64>,
    pub status: StepStatus,
    pub solve_ms: f64,
    pub gap: Option<f64>,
    pub decision: Option<StepDecision>,
    pub clipped: bool,
    pub diagnostics: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    /// Set when an environment step failed and the episode stopped early.
    pub aborted: Option<String>,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn mean_residual(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.residual_norm).sum::<f64>() / self.steps.len() as f64
    }

    pub fn max_residual(&self) -> f64 {
        self.steps.iter().map(|s| s.residual_norm).fold(0.0, f64::max)
    }

    pub fn min_gap(&self) -> Option<f64> {
        self.steps.iter().filter_map(|s| s.gap).reduce(f64::min)
    }

    pub fn total_solve_ms(&self) -> f64 {
        self.steps.iter().map(|s| s.solve_ms).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    Unadapted,
    Adapted,
    /// Per-step swarm search; `deep` searches the comparison model.
    Pso { config: PsoConfig, deep: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorKind {
    Origin,
    PiStar,
    Linearized,
}

impl AnchorKind {
    pub fn name(self) -> &'static str {
        match self {
            AnchorKind::Origin => "origin",
            AnchorKind::PiStar => "pi_star",
            AnchorKind::Linearized => "linearized",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "origin" => Some(AnchorKind::Origin),
            "pi_star" => Some(AnchorKind::PiStar),
            "linearized" => Some(AnchorKind::Linearized),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub horizon: usize,
    pub confidence: f64,
    pub delta: f64,
    pub trust_floor: f64,
    pub anchor: AnchorKind,
    pub reanchor: usize,
    pub omega_cap: f64,
    /// State covariance used before any transition has been observed.
    pub initial_variance: f64,
    pub settings: SolverSettings,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            confidence: 0.95,
            delta: 1e-6,
            trust_floor: 1e-8,
            anchor: AnchorKind::Linearized,
            reanchor: 1,
            omega_cap: 1e6,
            initial_variance: 1e-6,
            settings: SolverSettings::default(),
        }
    }
}

/// Closed loop: π* at `t = 0`, then adaptation and comparison at every later step.
///
/// `clock` returns seconds and is only used for the per-step solve times.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<S: ConicSolver>(
    env: &mut dyn Environment,
    surrogate: &SurrogatePair,
    pi_star: &dyn Policy,
    reference: &[DVector<f64>],
    controller: &Controller,
    cfg: &EpisodeConfig,
    solver: &S,
    rng: &mut dyn RngCore,
    clock: &dyn Fn() -> f64,
) -> Result<EpisodeLog> {
    let t_max = cfg.horizon;
    if reference.len() < t_max + 1 {
        return Err(Error::DimensionMismatch { expected: t_max + 1, found: reference.len() });
    }
    let n = env.state_dim();
    check_dim(n, surrogate.state_dim())?;
    check_dim(env.action_dim(), surrogate.action_dim())?;
    let (lo, hi) = (env.lower(), env.upper());
    let mut log = EpisodeLog::default();
    let mut s = env.reset();
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;

    for t in 0..t_max {
        let target = &reference[t + 1];
        let pi_a = clip(&pi_star.act(t, &s), &lo, &hi);
        let started = clock();
        let mut status = StepStatus::PiStar;
        let mut decision = None;
        let mut log_det = None;
        let mut clipped = false;
        let mut diagnostics = None;
        let action = match controller {
            Controller::Unadapted => pi_a.clone(),
            Controller::Pso { config, deep } => {
                status = StepStatus::Pso;
                let c = PsoConfig { seed: config.seed.wrapping_add(t as u64), ..*config };
                pso_adapt_step(surrogate, &s, target, &lo, &hi, *deep, &c)?.best
            }
            Controller::Adapted if t == 0 => {
                status = StepStatus::Initial;
                let d = select_action(surrogate, &s, &pi_a, None, target)?;
                decision = Some(d);
                pi_a.clone()
            }
            Controller::Adapted => {
                let cov = match &prev {
                    Some((sp, ap)) => surrogate.predict_cov(sp, ap)?,
                    None => DMatrix::identity(n, n) * cfg.initial_variance,
                };
                let attempt = surrogate.state_region(&s, &cov, cfg.confidence).and_then(|region| {
                    let anchor = match cfg.anchor {
                        AnchorKind::Origin => Anchor::Origin,
                        AnchorKind::PiStar => Anchor::Given(pi_a.clone()),
                        AnchorKind::Linearized => Anchor::Linearized(Some(pi_a.clone())),
                    };
                    let problem = AdaptProblem {
                        delta: cfg.delta,
                        trust_floor: cfg.trust_floor,
                        anchor,
                        reanchor: cfg.reanchor,
                        omega_cap: cfg.omega_cap,
                        ..AdaptProblem::new(surrogate.mean_net.clone(), region, target.clone(), lo.clone(), hi.clone())
                    };
                    solve_adaptation(solver, &cfg.settings, &problem)
                });
                let d = match attempt {
                    Ok(sol) => {
                        status = StepStatus::Optimal;
                        log_det = Some(sol.log_det_bound());
                        clipped = sol.clipped;
                        let mut d = select_action(surrogate, &s, &pi_a, Some(&sol.adapted_action), target)?;
                        d.log_det_bound = log_det;
                        d
                    }
                    Err(e) => {
                        status = StepStatus::from_error(&e);
                        diagnostics = Some(e.to_string());
                        select_action(surrogate, &s, &pi_a, None, target)?
                    }
                };
                let a = d.chosen.clone();
                decision = Some(d);
                a
            }
        };
        let solve_ms = (clock() - started).max(0.0) * 1e3;
        let next = match env.step(&action, rng) {
            Ok(v) => v,
            Err(e) => {
                log.aborted = Some(e.to_string());
                return Ok(log);
            }
        };
        log.steps.push(StepRecord {
            t,
            reference: reference[t].clone(),
            state: s.clone(),
            action: action.clone(),
            residual_norm: (target - &next).norm(),
            log_det_bound: log_det,
            status,
            solve_ms,
            gap: env.gap(),
            decision,
            clipped,
            diagnostics,
        });
        prev = Some((s, action));
        s = next;
    }
    Ok(log)
}
