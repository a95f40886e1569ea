//! Conic programs with semidefinite constraints and a log-det objective.
//!
//! Programs are built from scalar variables. Symmetric matrix variables are a
//! bundle of scalars (upper triangle, column-major). Constraints are affine
//! symmetric expressions required to be PSD, plus linear equalities and
//! inequalities. The objective is maximized.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use nalgebra::{DMatrix, SymmetricEigen};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// `constant + Σ coef · var`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr {
    pub constant: f64,
    pub terms: Vec<(VarId, f64)>,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: Vec::new() }
    }

    pub fn var(v: VarId) -> Self {
        Self { constant: 0.0, terms: alloc::vec![(v, 1.0)] }
    }

    pub fn term(mut self, v: VarId, coef: f64) -> Self {
        self.terms.push((v, coef));
        self
    }

    pub fn plus(mut self, other: &LinExpr) -> Self {
        self.constant += other.constant;
        self.terms.extend_from_slice(&other.terms);
        self
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.constant *= k;
        self.terms.iter_mut().for_each(|t| t.1 *= k);
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * x[v.0]).sum::<f64>()
    }
}

/// Symmetric affine matrix expression `C + Σ x_k F_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymExpr {
    dim: usize,
    pub constant: DMatrix<f64>,
    pub terms: Vec<(VarId, DMatrix<f64>)>,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

impl SymExpr {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, constant: DMatrix::zeros(dim, dim), terms: Vec::new() }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        let dim = m.nrows();
        Self { dim, constant: symmetrize(&m), terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Adds `coef · var · F` (F is symmetrized).
    pub fn add_term(&mut self, v: VarId, f: &DMatrix<f64>) {
        assert_eq!(f.nrows(), self.dim, "term dimension");
        self.terms.push((v, symmetrize(f)));
    }

    pub fn add_constant(&mut self, m: &DMatrix<f64>) {
        self.constant += symmetrize(m);
    }

    pub fn add(&mut self, other: &SymExpr) {
        assert_eq!(other.dim, self.dim, "expression dimension");
        self.constant += &other.constant;
        self.terms.extend(other.terms.iter().cloned());
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.constant *= k;
        self.terms.iter_mut().for_each(|t| t.1 *= k);
        self
    }

    /// `Tᵀ E T` for `T` of shape `dim × k`.
    pub fn congruence(&self, t: &DMatrix<f64>) -> SymExpr {
        assert_eq!(t.nrows(), self.dim, "congruence dimension");
        let tt = t.transpose();
        SymExpr {
            dim: t.ncols(),
            constant: symmetrize(&(&tt * &self.constant * t)),
            terms: self.terms.iter().map(|(v, f)| (*v, symmetrize(&(&tt * f * t)))).collect(),
        }
    }

    /// Places this expression as the block starting at `offset` of a larger one.
    pub fn embedded(&self, dim: usize, offset: usize) -> SymExpr {
        assert!(offset + self.dim <= dim, "block out of range");
        let place = |m: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(dim, dim);
            out.view_mut((offset, offset), (self.dim, self.dim)).copy_from(m);
            out
        };
        SymExpr {
            dim,
            constant: place(&self.constant),
            terms: self.terms.iter().map(|(v, f)| (*v, place(f))).collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (v, f) in &self.terms {
            out += f * x[v.0];
        }
        out
    }

    /// Coefficient matrix per variable with duplicates summed.
    pub fn merged_terms(&self) -> Vec<(VarId, DMatrix<f64>)> {
        let mut sorted: Vec<(VarId, DMatrix<f64>)> = self.terms.clone();
        sorted.sort_by_key(|t| t.0);
        let mut out: Vec<(VarId, DMatrix<f64>)> = Vec::new();
        for (v, f) in sorted {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += f,
                _ => out.push((v, f)),
            }
        }
        out
    }
}

/// Symmetric matrix variable backed by `dim (dim + 1) / 2` scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct MatVar {
    dim: usize,
    ids: Vec<VarId>,
}

impl MatVar {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[VarId] {
        &self.ids
    }

    pub fn id(&self, i: usize, j: usize) -> VarId {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        self.ids[c * (c + 1) / 2 + r]
    }

    pub fn expr(&self) -> SymExpr {
        let mut e = SymExpr::zeros(self.dim);
        for c in 0..self.dim {
            for r in 0..=c {
                let mut f = DMatrix::zeros(self.dim, self.dim);
                f[(r, c)] = 1.0;
                f[(c, r)] = 1.0;
                e.terms.push((self.id(r, c), f));
            }
        }
        e
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| x[self.id(i, j).0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Bounds {
    pub const FREE: Bounds = Bounds { lower: None, upper: None };
    pub const NONNEG: Bounds = Bounds { lower: Some(0.0), upper: None };
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogDetTerm {
    pub weight: f64,
    pub expr: SymExpr,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConicProgram {
    pub bounds: Vec<Bounds>,
    pub psd: Vec<SymExpr>,
    /// Each expression `= 0`.
    pub equalities: Vec<LinExpr>,
    /// Each expression `≥ 0`.
    pub inequalities: Vec<LinExpr>,
    pub logdet: Vec<LogDetTerm>,
    pub linear_objective: LinExpr,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.bounds.len()
    }

    pub fn add_var(&mut self, bounds: Bounds) -> VarId {
        self.bounds.push(bounds);
        VarId(self.bounds.len() - 1)
    }

    pub fn add_vars(&mut self, count: usize, bounds: Bounds) -> Vec<VarId> {
        (0..count).map(|_| self.add_var(bounds)).collect()
    }

    pub fn add_sym_matrix(&mut self, dim: usize) -> MatVar {
        let ids = self.add_vars(dim * (dim + 1) / 2, Bounds::FREE);
        MatVar { dim, ids }
    }

    /// Requires `expr ⪰ 0`.
    pub fn add_psd(&mut self, expr: SymExpr) {
        self.psd.push(expr);
    }

    pub fn add_eq(&mut self, expr: LinExpr) {
        self.equalities.push(expr);
    }

    /// Requires `expr ≥ 0`.
    pub fn add_ge(&mut self, expr: LinExpr) {
        self.inequalities.push(expr);
    }

    /// Adds `weight · logdet(expr)` to the maximized objective (implies `expr ≻ 0`).
    pub fn add_logdet(&mut self, weight: f64, expr: SymExpr) {
        self.logdet.push(LogDetTerm { weight, expr });
    }

    pub fn add_linear_objective(&mut self, expr: &LinExpr) {
        self.linear_objective = core::mem::take(&mut self.linear_objective).plus(expr);
    }

    /// Checks that every referenced variable exists.
    pub fn is_well_formed(&self) -> bool {
        let n = self.num_vars();
        let lin_ok = |e: &LinExpr| e.terms.iter().all(|(v, _)| v.0 < n);
        let sym_ok = |e: &SymExpr| e.terms.iter().all(|(v, f)| v.0 < n && f.nrows() == e.dim());
        self.psd.iter().all(sym_ok)
            && self.logdet.iter().all(|t| sym_ok(&t.expr))
            && self.equalities.iter().all(lin_ok)
            && self.inequalities.iter().all(lin_ok)
            && lin_ok(&self.linear_objective)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        let mut total = self.linear_objective.eval(x);
        for t in &self.logdet {
            let m = t.expr.eval(x);
            total += t.weight * match m.cholesky() {
                Some(ch) => 2.0 * ch.l_dirty().diagonal().iter().map(|d| libm::log(*d)).sum::<f64>(),
                None => f64::NEG_INFINITY,
            };
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub status: SolveStatus,
    /// Present iff `status` is optimal.
    pub values: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub solve_seconds: f64,
    pub iterations: u32,
    pub diagnostics: String,
}

impl SolverResult {
    pub fn failed(status: SolveStatus, solve_seconds: f64, diagnostics: String) -> Self {
        Self { status, values: None, objective: None, solve_seconds, iterations: 0, diagnostics }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub feasibility_tol: f64,
    pub gap_tol: f64,
    pub max_iter: u32,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { feasibility_tol: 1e-8, gap_tol: 1e-8, max_iter: 200 }
    }
}

pub trait ConicSolver {
    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> SolverResult;
}

impl<S: ConicSolver + ?Sized> ConicSolver for &S {
    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> SolverResult {
        (**self).solve(program, settings)
    }
}

/// Independent re-check of a returned point.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    /// Per PSD constraint: `min eigenvalue / max(1, ‖M‖₂)`.
    pub psd_margins: Vec<f64>,
    /// Per log-det term: smallest eigenvalue (must be positive).
    pub logdet_min_eigen: Vec<f64>,
    pub max_equality_violation: f64,
    pub max_inequality_violation: f64,
    pub max_bound_violation: f64,
    pub passed: bool,
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.amax()
}

/// Re-checks every constraint at `result.values` by eigenvalue computation.
pub fn verify(result: &SolverResult, program: &ConicProgram, tol: f64) -> VerifyReport {
    let Some(x) = result.values.as_deref() else {
        return VerifyReport {
            psd_margins: Vec::new(),
            logdet_min_eigen: Vec::new(),
            max_equality_violation: f64::INFINITY,
            max_inequality_violation: f64::INFINITY,
            max_bound_violation: f64::INFINITY,
            passed: false,
        };
    };
    let psd_margins: Vec<f64> = program
        .psd
        .iter()
        .map(|e| {
            let m = e.eval(x);
            min_eigenvalue(&m) / spectral_norm(&m).max(1.0)
        })
        .collect();
    let logdet_min_eigen: Vec<f64> = program.logdet.iter().map(|t| min_eigenvalue(&t.expr.eval(x))).collect();
    let max_equality_violation = program.equalities.iter().map(|e| libm::fabs(e.eval(x))).fold(0.0, f64::max);
    let max_inequality_violation = program.inequalities.iter().map(|e| (-e.eval(x)).max(0.0)).fold(0.0, f64::max);
    let max_bound_violation = program
        .bounds
        .iter()
        .zip(x)
        .map(|(b, v)| {
            let lo = b.lower.map_or(0.0, |l| (l - v).max(0.0));
            let hi = b.upper.map_or(0.0, |u| (v - u).max(0.0));
            lo.max(hi)
        })
        .fold(0.0, f64::max);
    let passed = psd_margins.iter().all(|m| *m >= -tol)
        && logdet_min_eigen.iter().all(|m| *m > 0.0)
        && max_equality_violation <= tol
        && max_inequality_violation <= tol
        && max_bound_violation <= tol;
    VerifyReport { psd_margins, logdet_min_eigen, max_equality_violation, max_inequality_violation, max_bound_violation, passed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvar_layout() {
        let mut p = ConicProgram::new();
        let x = p.add_sym_matrix(3);
        assert_eq!(x.ids().len(), 6);
        assert_eq!(x.id(0, 1), x.id(1, 0));
        let vals: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let m = x.value(&vals);
        assert_eq!(m, x.expr().eval(&vals));
        assert_eq!(m[(0, 2)], 3.0);
        assert_eq!(m[(2, 2)], 5.0);
    }

    #[test]
    fn congruence_matches_dense() {
        let mut p = ConicProgram::new();
        let x = p.add_sym_matrix(2);
        let t = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        let vals = [2.0, 0.3, 1.0];
        let direct = t.transpose() * x.value(&vals) * &t;
        assert!((x.expr().congruence(&t).eval(&vals) - direct).amax() < 1e-12);
    }

    #[test]
    fn verify_flags_violations() {
        let mut p = ConicProgram::new();
        let v = p.add_var(Bounds::NONNEG);
        let mut e = SymExpr::constant(DMatrix::identity(2, 2));
        e.add_term(v, &(-DMatrix::identity(2, 2)));
        p.add_psd(e);
        let ok = SolverResult { status: SolveStatus::Optimal, values: Some(alloc::vec![0.5]), objective: None, solve_seconds: 0.0, iterations: 0, diagnostics: String::new() };
        assert!(verify(&ok, &p, 1e-9).passed);
        let bad = SolverResult { values: Some(alloc::vec![2.0]), ..ok.clone() };
        assert!(!verify(&bad, &p, 1e-9).passed);
        let neg = SolverResult { values: Some(alloc::vec![-1.0]), ..ok };
        assert!(!verify(&neg, &p, 1e-9).passed);
    }
}
