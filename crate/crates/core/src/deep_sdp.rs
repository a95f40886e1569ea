//! Quadratic-constraint matrices over the base vector `z = [s; a; x; 1]` and
//! the fixed-action residual reach bound.
//!
//! `x` stacks all hidden post-activations layer by layer. Each matrix `M`
//! encodes a quadratic form `zᵀ M z ≥ 0` that holds on the relevant set:
//! the state ellipsoid (`M_s`), the action ellipsoid (`M_a`), the graph of the
//! ReLU layers (`M_φ`), and the residual ellipsoid `rᵀ Ω r ≤ 1` (`M_out`).

use alloc::vec::Vec;
use core::ops::Range;
use nalgebra::{DMatrix, DVector};

use crate::conic::{Bounds, ConicProgram, ConicSolver, LinExpr, MatVar, SolveStatus, SolverSettings, SymExpr, VarId};
use crate::error::{check_dim, Error, Result};
use crate::gauss::{regularized_covariance, Ellipsoid};
use crate::relu::{Activation, ReluNetwork};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseVectorLayout {
    pub n: usize,
    pub m: usize,
    pub hidden: Vec<usize>,
}

impl BaseVectorLayout {
    pub fn hidden_total(&self) -> usize {
        self.hidden.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.n + self.m + self.hidden_total() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn s_range(&self) -> Range<usize> {
        0..self.n
    }

    pub fn a_range(&self) -> Range<usize> {
        self.n..self.n + self.m
    }

    pub fn x_range(&self) -> Range<usize> {
        self.n + self.m..self.n + self.m + self.hidden_total()
    }

    pub fn one_index(&self) -> usize {
        self.len() - 1
    }

    /// Base vector for the given input, using the network's true activations.
    pub fn base_vector(&self, net: &ReluNetwork, s: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.n, s.len())?;
        check_dim(self.m, a.len())?;
        let input = crate::train::concat(s, a);
        let trace = net.forward_trace(&input)?;
        let mut z = DVector::zeros(self.len());
        z.rows_mut(0, self.n + self.m).copy_from(&input);
        z.rows_mut(self.n + self.m, self.hidden_total()).copy_from(&trace.stacked_post());
        z[self.one_index()] = 1.0;
        Ok(z)
    }
}

pub fn build_layout(net: &ReluNetwork, n: usize, m: usize) -> Result<BaseVectorLayout> {
    check_dim(n + m, net.input_dim())?;
    Ok(BaseVectorLayout { n, m, hidden: net.hidden_dims().to_vec() })
}

fn check_layout(net: &ReluNetwork, layout: &BaseVectorLayout) -> Result<()> {
    check_dim(layout.n + layout.m, net.input_dim())?;
    if net.hidden_dims() != layout.hidden.as_slice() {
        return Err(Error::Config("layout does not match the network's hidden layers".into()));
    }
    Ok(())
}

/// `E₁` with `E₁ z = [s; 1]`.
pub fn selector_state(layout: &BaseVectorLayout) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(layout.n + 1, layout.len());
    for i in 0..layout.n {
        e[(i, i)] = 1.0;
    }
    e[(layout.n, layout.one_index())] = 1.0;
    e
}

/// `E₂` with `E₂ z = [a; 1]`.
pub fn selector_action(layout: &BaseVectorLayout) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(layout.m + 1, layout.len());
    for i in 0..layout.m {
        e[(i, layout.n + i)] = 1.0;
    }
    e[(layout.m, layout.one_index())] = 1.0;
    e
}

/// `E₃` with `E₃ z = [v; x; 1]`, `v` the hidden pre-activations written
/// affinely through the weights.
pub fn selector_activation(net: &ReluNetwork, layout: &BaseVectorLayout) -> Result<DMatrix<f64>> {
    check_layout(net, layout)?;
    let nh = layout.hidden_total();
    let len = layout.len();
    let one = layout.one_index();
    let mut e = DMatrix::zeros(2 * nh + 1, len);
    let x0 = layout.n + layout.m;
    let mut row = 0;
    let mut prev_col = 0;
    let mut prev_len = layout.n + layout.m;
    for (i, &width) in layout.hidden.iter().enumerate() {
        let w = &net.weights()[i];
        let b = &net.biases()[i];
        for r in 0..width {
            for c in 0..prev_len {
                e[(row + r, prev_col + c)] = w[(r, c)];
            }
            e[(row + r, one)] = b[r];
        }
        prev_col = if i == 0 { x0 } else { prev_col + prev_len };
        prev_len = width;
        row += width;
    }
    for k in 0..nh {
        e[(nh + k, x0 + k)] = 1.0;
    }
    e[(2 * nh, one)] = 1.0;
    Ok(e)
}

/// Per-neuron S-procedure multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct QcMultipliers {
    pub lambda: DVector<f64>,
    pub nu: DVector<f64>,
    pub eta: DVector<f64>,
}

impl QcMultipliers {
    pub fn zeros(count: usize) -> Self {
        Self { lambda: DVector::zeros(count), nu: DVector::zeros(count), eta: DVector::zeros(count) }
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn combine(&self, alpha: f64, other: &QcMultipliers, beta: f64) -> QcMultipliers {
        QcMultipliers {
            lambda: &self.lambda * alpha + &other.lambda * beta,
            nu: &self.nu * alpha + &other.nu * beta,
            eta: &self.eta * alpha + &other.eta * beta,
        }
    }
}

fn ellipsoid_block(center: &DVector<f64>, inv: &DMatrix<f64>, level: f64) -> DMatrix<f64> {
    let k = center.len();
    let ic = inv * center;
    let mut q = DMatrix::zeros(k + 1, k + 1);
    q.view_mut((0, 0), (k, k)).copy_from(&(-inv));
    q.view_mut((0, k), (k, 1)).copy_from(&ic);
    q.view_mut((k, 0), (1, k)).copy_from(&ic.transpose());
    q[(k, k)] = level - center.dot(&ic);
    q
}

fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let reg = regularized_covariance(m)?;
    reg.cholesky().map(|c| c.inverse()).ok_or(Error::IllConditioned { eigenvalue: 0.0 })
}

/// `M_s = (1/ρ) E₁ᵀ [−Σ⁻¹, Σ⁻¹μ; μᵀΣ⁻¹, −μᵀΣ⁻¹μ + ρ] E₁`.
pub fn build_m_state(mu: &DVector<f64>, sigma: &DMatrix<f64>, rho: f64, layout: &BaseVectorLayout) -> Result<DMatrix<f64>> {
    check_dim(layout.n, mu.len())?;
    check_dim(layout.n, sigma.nrows())?;
    if !(rho > 0.0) {
        return Err(Error::Domain("confidence radius must be positive".into()));
    }
    let inv = spd_inverse(sigma)?;
    let e1 = selector_state(layout);
    Ok(e1.transpose() * ellipsoid_block(mu, &inv, rho) * e1 / rho)
}

/// `M_a = E₂ᵀ [−Ω_a⁻¹, Ω_a⁻¹μ_a; μ_aᵀΩ_a⁻¹, −μ_aᵀΩ_a⁻¹μ_a + 1] E₂`.
pub fn build_m_action(mu_a: &DVector<f64>, omega_a: &DMatrix<f64>, layout: &BaseVectorLayout) -> Result<DMatrix<f64>> {
    check_dim(layout.m, mu_a.len())?;
    check_dim(layout.m, omega_a.nrows())?;
    let inv = spd_inverse(omega_a)?;
    let e2 = selector_action(layout);
    Ok(e2.transpose() * ellipsoid_block(mu_a, &inv, 1.0) * e2)
}

/// `Q_φ` over `[v; x; 1]` for
/// `Σ λ_j (x_j v_j − x_j²) + Σ ν_j (x_j − v_j) + Σ η_j x_j`.
pub fn build_q_phi(mult: &QcMultipliers) -> DMatrix<f64> {
    let nh = mult.len();
    let one = 2 * nh;
    let mut q = DMatrix::zeros(2 * nh + 1, 2 * nh + 1);
    for j in 0..nh {
        let (v, x) = (j, nh + j);
        let l = mult.lambda[j];
        q[(v, x)] += 0.5 * l;
        q[(x, v)] += 0.5 * l;
        q[(x, x)] -= l;
        let nu = mult.nu[j];
        let eta = mult.eta[j];
        q[(x, one)] += 0.5 * (nu + eta);
        q[(one, x)] += 0.5 * (nu + eta);
        q[(v, one)] -= 0.5 * nu;
        q[(one, v)] -= 0.5 * nu;
    }
    q
}

/// `M_φ = E₃ᵀ Q_φ E₃`, affine in the multipliers.
pub fn build_m_phi(net: &ReluNetwork, mult: &QcMultipliers, layout: &BaseVectorLayout) -> Result<DMatrix<f64>> {
    check_dim(layout.hidden_total(), mult.len())?;
    if layout.hidden_total() > 0 && net.hidden_activation() != Activation::Relu {
        return Err(Error::Config("activation constraints are only valid for ReLU layers".into()));
    }
    let e3 = selector_activation(net, layout)?;
    Ok(e3.transpose() * build_q_phi(mult) * e3)
}

/// `[C b]` mapping the base vector to the residual `μ(s, a) − target`.
pub fn output_map(net: &ReluNetwork, target: &DVector<f64>, layout: &BaseVectorLayout) -> Result<DMatrix<f64>> {
    check_layout(net, layout)?;
    let out = net.output_dim();
    check_dim(out, target.len())?;
    let last = net.weights().len() - 1;
    let mut o = DMatrix::zeros(out, layout.len());
    let w = &net.weights()[last];
    if last == 0 {
        o.view_mut((0, 0), (out, layout.n + layout.m)).copy_from(w);
    } else {
        let width = layout.hidden[last - 1];
        let col = layout.x_range().end - width;
        o.view_mut((0, col), (out, width)).copy_from(w);
    }
    if let Some(d) = net.skip() {
        let mut block = o.view_mut((0, 0), (out, layout.n + layout.m));
        block += d;
    }
    let b = &net.biases()[last] - target;
    o.view_mut((0, layout.one_index()), (out, 1)).copy_from(&b);
    Ok(o)
}

/// `M_out = [C b; 0 1]ᵀ [−Ω 0; 0 1] [C b; 0 1]`.
pub fn build_m_out(net: &ReluNetwork, target: &DVector<f64>, omega: &DMatrix<f64>, layout: &BaseVectorLayout) -> Result<DMatrix<f64>> {
    let o = output_map(net, target, layout)?;
    check_dim(o.nrows(), omega.nrows())?;
    let mut m = -(o.transpose() * omega * &o);
    let k = layout.one_index();
    m[(k, k)] += 1.0;
    Ok(m)
}

/// All matrices of one instance, evaluated at fixed multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSet {
    pub m_s: DMatrix<f64>,
    pub m_a: DMatrix<f64>,
    pub m_phi: DMatrix<f64>,
    pub m_out: DMatrix<f64>,
    pub e1: DMatrix<f64>,
    pub e2: DMatrix<f64>,
    pub e3: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl MatrixSet {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        net: &ReluNetwork,
        layout: &BaseVectorLayout,
        state: &Ellipsoid,
        action: &Ellipsoid,
        mult: &QcMultipliers,
        omega: &DMatrix<f64>,
        target: &DVector<f64>,
    ) -> Result<Self> {
        let o = output_map(net, target, layout)?;
        let k = layout.one_index();
        Ok(Self {
            m_s: build_m_state(state.center(), state.shape(), 1.0, layout)?,
            m_a: build_m_action(action.center(), action.shape(), layout)?,
            m_phi: build_m_phi(net, mult, layout)?,
            m_out: build_m_out(net, target, omega, layout)?,
            e1: selector_state(layout),
            e2: selector_action(layout),
            e3: selector_activation(net, layout)?,
            c: o.columns(0, k).into_owned(),
            b: o.column(k).into_owned(),
        })
    }
}

/// Interval bounds on hidden pre-activations for inputs in a box.
pub fn preactivation_bounds(net: &ReluNetwork, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<Vec<(f64, f64)>> {
    check_dim(net.input_dim(), lo.len())?;
    check_dim(net.input_dim(), hi.len())?;
    let mut out = Vec::new();
    let (mut l, mut u) = (lo.clone(), hi.clone());
    for i in 0..net.hidden_dims().len() {
        let w = &net.weights()[i];
        let mid = (&l + &u) * 0.5;
        let rad = (&u - &l) * 0.5;
        let c = w * mid + &net.biases()[i];
        let r = w.abs() * rad;
        let vl = &c - &r;
        let vu = &c + &r;
        for k in 0..vl.len() {
            out.push((vl[k], vu[k]));
        }
        l = vl.map(|v| v.max(0.0));
        u = vu.map(|v| v.max(0.0));
    }
    Ok(out)
}

/// Multiplier variables of `M_φ` inside a program.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierVars {
    pub lambda: Vec<VarId>,
    pub nu: Vec<VarId>,
    pub eta: Vec<VarId>,
}

impl MultiplierVars {
    pub fn value(&self, x: &[f64]) -> QcMultipliers {
        let pick = |ids: &[VarId]| DVector::from_iterator(ids.len(), ids.iter().map(|v| x[v.0]));
        QcMultipliers { lambda: pick(&self.lambda), nu: pick(&self.nu), eta: pick(&self.eta) }
    }
}

/// Declares the multipliers and returns the symbolic `M_φ`.
///
/// With `bounds`, neurons that are provably active get a free `ν` and
/// provably inactive ones a free `η`.
pub fn m_phi_expr(
    program: &mut ConicProgram,
    net: &ReluNetwork,
    layout: &BaseVectorLayout,
    bounds: Option<&[(f64, f64)]>,
) -> Result<(SymExpr, MultiplierVars)> {
    let nh = layout.hidden_total();
    let e3 = selector_activation(net, layout)?;
    if nh > 0 && net.hidden_activation() != Activation::Relu {
        return Err(Error::Config("activation constraints are only valid for ReLU layers".into()));
    }
    let mut expr = SymExpr::zeros(layout.len());
    let mut vars = MultiplierVars { lambda: Vec::new(), nu: Vec::new(), eta: Vec::new() };
    for j in 0..nh {
        let (active, inactive) = match bounds {
            Some(b) => (b[j].0 > 0.0, b[j].1 < 0.0),
            None => (false, false),
        };
        let unit = |which: usize| {
            let mut m = QcMultipliers::zeros(nh);
            match which {
                0 => m.lambda[j] = 1.0,
                1 => m.nu[j] = 1.0,
                _ => m.eta[j] = 1.0,
            }
            e3.transpose() * build_q_phi(&m) * &e3
        };
        let l = program.add_var(Bounds::FREE);
        let nu = program.add_var(if active { Bounds::FREE } else { Bounds::NONNEG });
        let eta = program.add_var(if inactive { Bounds::FREE } else { Bounds::NONNEG });
        expr.add_term(l, &unit(0));
        expr.add_term(nu, &unit(1));
        expr.add_term(eta, &unit(2));
        vars.lambda.push(l);
        vars.nu.push(nu);
        vars.eta.push(eta);
    }
    Ok((expr, vars))
}

/// Symbolic `M_out` for a matrix variable `Ω`.
pub fn m_out_expr(output: &DMatrix<f64>, omega: &MatVar) -> SymExpr {
    let mut e = omega.expr().congruence(output).scaled(-1.0);
    let len = output.ncols();
    let mut corner = DMatrix::zeros(len, len);
    corner[(len - 1, len - 1)] = 1.0;
    e.add_constant(&corner);
    e
}

/// Unit-ball quadratic constraint `1 − ‖y‖² ≥ 0` on the block `range`.
pub fn unit_ball_qc(layout_len: usize, range: Range<usize>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(layout_len, layout_len);
    for i in range {
        m[(i, i)] = -1.0;
    }
    m[(layout_len - 1, layout_len - 1)] = 1.0;
    m
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionRegion {
    Point(DVector<f64>),
    Region(Ellipsoid),
}

impl ActionRegion {
    pub fn dim(&self) -> usize {
        match self {
            ActionRegion::Point(a) => a.len(),
            ActionRegion::Region(e) => e.dim(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundOptions {
    /// Tighten activation constraints with interval bounds.
    pub interval_bounds: bool,
    /// Upper cap on `Ω` in normalized residual units.
    pub omega_cap: f64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self { interval_bounds: false, omega_cap: 1e6 }
    }
}

/// Certified residual bound `𝓔(0, Ω⁻¹)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBound {
    pub ellipsoid: Ellipsoid,
    pub omega: DMatrix<f64>,
    pub log_det_omega: f64,
    pub tau_state: f64,
    pub tau_action: f64,
    pub multipliers: QcMultipliers,
    pub solve_seconds: f64,
    /// Cap on normalized `Ω` the reported solve ran with (after any retry).
    pub omega_cap: f64,
}

impl ResidualBound {
    /// `log det Ω_R = −log det Ω`.
    pub fn log_det_shape(&self) -> f64 {
        -self.log_det_omega
    }
}

/// Residual map composed with the unit-ball parameterization of the inputs.
///
/// Returns the normalized network (output = residual divided by `scale`) and
/// the per-coordinate residual scale.
pub(crate) fn normalized_residual_net(
    net: &ReluNetwork,
    input_map: &DMatrix<f64>,
    input_offset: &DVector<f64>,
    target: &DVector<f64>,
) -> Result<(ReluNetwork, DVector<f64>)> {
    let composed = net.with_input_affine(input_map, input_offset)?;
    let out = net.output_dim();
    check_dim(out, target.len())?;
    let k = input_map.ncols();
    // residual spread at the center and the axis points of the unit ball
    let mut spread = DVector::<f64>::zeros(out);
    let mut probe = |y: &DVector<f64>| -> Result<()> {
        let r = composed.forward(y)? - target;
        for i in 0..out {
            spread[i] = spread[i].max(libm::fabs(r[i]));
        }
        Ok(())
    };
    probe(&DVector::zeros(k))?;
    for i in 0..k {
        for sign in [-1.0, 1.0] {
            let mut y = DVector::zeros(k);
            y[i] = sign;
            probe(&y)?;
        }
    }
    let top = spread.max();
    let scale = spread.map(|v| if top > 0.0 { v.max(1e-6 * top) } else { 1.0 });
    let inv = DMatrix::from_diagonal(&scale.map(|v| 1.0 / v));
    let shifted = composed.with_output_affine(&inv, &(-(&inv * target)))?;
    Ok((shifted, scale))
}

pub(crate) fn status_error(status: SolveStatus, diagnostics: &str) -> Error {
    match status {
        SolveStatus::NumericalFailure => Error::Backend(diagnostics.into()),
        other => Error::Certification(other.as_str().into()),
    }
}

/// Minimum-volume origin-centered ellipsoid containing every residual
/// `μ(s, a) − target` for `s` in the state region and `a` in the action region.
pub fn bound_residual_fixed_action<S: ConicSolver>(
    solver: &S,
    settings: &SolverSettings,
    net: &ReluNetwork,
    state_region: &Ellipsoid,
    action: &ActionRegion,
    target: &DVector<f64>,
    opts: &BoundOptions,
) -> Result<ResidualBound> {
    let n = state_region.dim();
    let m = action.dim();
    check_dim(n + m, net.input_dim())?;
    let ls = state_region.factor();
    let (map, offset, m_free) = match action {
        ActionRegion::Point(a) => {
            let mut t = DMatrix::zeros(n + m, n);
            t.view_mut((0, 0), (n, n)).copy_from(&ls);
            (t, crate::train::concat(state_region.center(), a), 0)
        }
        ActionRegion::Region(e) => {
            let mut t = DMatrix::zeros(n + m, n + m);
            t.view_mut((0, 0), (n, n)).copy_from(&ls);
            t.view_mut((n, n), (m, m)).copy_from(&e.factor());
            (t, crate::train::concat(state_region.center(), e.center()), m)
        }
    };
    let (unit_net, scale) = normalized_residual_net(net, &map, &offset, target)?;
    let layout = build_layout(&unit_net, n, m_free)?;
    let len = layout.len();
    let out = net.output_dim();

    let ibp = if opts.interval_bounds {
        let k = n + m_free;
        Some(preactivation_bounds(&unit_net, &DVector::from_element(k, -1.0), &DVector::from_element(k, 1.0))?)
    } else {
        None
    };
    let build = |cap: f64| -> Result<_> {
        let mut p = ConicProgram::new();
        let omega = p.add_sym_matrix(out);
        let tau_s = p.add_var(Bounds::NONNEG);
        let tau_a = (m_free > 0).then(|| p.add_var(Bounds::NONNEG));
        let (phi, mult_vars) = m_phi_expr(&mut p, &unit_net, &layout, ibp.as_deref())?;
        let o = output_map(&unit_net, &DVector::zeros(out), &layout)?;
        let mut lmi = m_out_expr(&o, &omega);
        lmi.add_term(tau_s, &(-unit_ball_qc(len, layout.s_range())));
        if let Some(ta) = tau_a {
            lmi.add_term(ta, &(-unit_ball_qc(len, layout.a_range())));
        }
        lmi.add(&phi.scaled(-1.0));
        p.add_psd(lmi);
        let mut upper = omega.expr().scaled(-1.0);
        upper.add_constant(&(DMatrix::identity(out, out) * cap));
        p.add_psd(upper);
        p.add_logdet(1.0, omega.expr());
        p.add_linear_objective(&LinExpr::default());
        Ok((p, omega, tau_s, tau_a, mult_vars))
    };
    let (p, omega, tau_s, tau_a, mult_vars) = build(opts.omega_cap)?;
    let mut res = solver.solve(&p, settings);
    let mut cap = opts.omega_cap;
    let (omega, tau_s, tau_a, mult_vars) = if res.status == SolveStatus::NumericalFailure {
        // a looser cap often rescues poorly scaled instances
        cap *= 1e-2;
        let (p2, o2, ts2, ta2, mv2) = build(cap)?;
        res = solver.solve(&p2, settings);
        (o2, ts2, ta2, mv2)
    } else {
        (omega, tau_s, tau_a, mult_vars)
    };
    if res.status != SolveStatus::Optimal {
        return Err(status_error(res.status, &res.diagnostics));
    }
    let x = res.values.as_deref().expect("optimal result carries values");
    let omega_hat = omega.value(x);
    let kinv = DMatrix::from_diagonal(&scale.map(|v| 1.0 / v));
    let omega_raw = &kinv * omega_hat * &kinv;
    let omega_raw = (&omega_raw + omega_raw.transpose()) * 0.5;
    let chol = omega_raw.clone().cholesky().ok_or(Error::Backend("returned Ω is not positive definite".into()))?;
    let log_det_omega = 2.0 * chol.l_dirty().diagonal().iter().map(|d| libm::log(*d)).sum::<f64>();
    let shape = chol.inverse();
    let ellipsoid = Ellipsoid::new(DVector::zeros(out), (&shape + shape.transpose()) * 0.5)?;
    Ok(ResidualBound {
        ellipsoid,
        omega: omega_raw,
        log_det_omega,
        tau_state: x[tau_s.0],
        tau_action: tau_a.map_or(0.0, |v| x[v.0]),
        multipliers: mult_vars.value(x),
        solve_seconds: res.solve_seconds,
        omega_cap: cap,
    })
}
