//! Conic backend delegating to the Clarabel interior-point solver.
//!
//! Translation into `min qᵀx  s.t.  Ax + s = b, s ∈ K`:
//! equalities go to the zero cone, inequalities and variable bounds to the
//! nonnegative cone, PSD expressions to the scaled upper-triangle PSD cone.
//! Each `logdet(X)` term adds a lower-triangular `Z`, the block
//! `[X Z; Zᵀ diag(Z)] ⪰ 0`, and `t_i ≤ log Z_ii` via exponential cones.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
    SupportedConeT::{ExponentialConeT, NonnegativeConeT, PSDTriangleConeT, ZeroConeT},
};
use nalgebra::DMatrix;
use shiftguard_core::conic::{verify, ConicProgram, ConicSolver, SolveStatus, SolverResult, SolverSettings, SymExpr};

/// Environment variable overriding the feasibility and gap tolerances.
pub const TOLERANCE_ENV: &str = "SHIFTGUARD_SOLVER_TOL";

/// Default settings, with `SHIFTGUARD_SOLVER_TOL` applied when set to a positive number.
pub fn settings_from_env() -> SolverSettings {
    let mut s = SolverSettings::default();
    if let Some(tol) = std::env::var(TOLERANCE_ENV).ok().and_then(|v| v.trim().parse::<f64>().ok()) {
        if tol > 0.0 && tol.is_finite() {
            s.feasibility_tol = tol;
            s.gap_tol = tol;
        }
    }
    s
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelSolver {
    pub verbose: bool,
}

struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

impl Rows {
    fn next_row(&self) -> usize {
        self.b.len()
    }

    fn push(&mut self, row: usize, col: usize, val: f64) {
        if val != 0.0 {
            self.i.push(row);
            self.j.push(col);
            self.v.push(val);
        }
    }
}

fn svec_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Upper triangle column by column, off-diagonals scaled by √2.
fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(svec_len(n));
    for c in 0..n {
        for r in 0..=c {
            let k = if r == c { 1.0 } else { std::f64::consts::SQRT_2 };
            out.push(m[(r, c)] * k);
        }
    }
    out
}

/// Adds `expr ⪰ 0` as a PSD cone block; extra columns hold auxiliary terms.
fn push_psd(rows: &mut Rows, expr: &SymExpr, extra: &[(usize, DMatrix<f64>)]) {
    let dim = expr.dim();
    let start = rows.next_row();
    rows.b.extend(svec(&expr.constant));
    for (v, f) in expr.merged_terms() {
        for (k, val) in svec(&f).into_iter().enumerate() {
            rows.push(start + k, v.0, -val);
        }
    }
    for (col, f) in extra {
        for (k, val) in svec(f).into_iter().enumerate() {
            rows.push(start + k, *col, -val);
        }
    }
    if dim == 1 {
        rows.cones.push(NonnegativeConeT(1));
    } else {
        rows.cones.push(PSDTriangleConeT(dim));
    }
}

impl ClarabelSolver {
    fn build(&self, p: &ConicProgram) -> (Vec<f64>, CscMatrix<f64>, Rows, usize) {
        let nv = p.num_vars();
        // auxiliary columns: per log-det term, Z (lower triangle) then t
        let mut aux_offsets = Vec::with_capacity(p.logdet.len());
        let mut total = nv;
        for t in &p.logdet {
            aux_offsets.push(total);
            let k = t.expr.dim();
            total += svec_len(k) + k;
        }
        let mut q = vec![0.0; total];
        for (v, c) in &p.linear_objective.terms {
            q[v.0] -= c;
        }
        let mut rows = Rows { i: Vec::new(), j: Vec::new(), v: Vec::new(), b: Vec::new(), cones: Vec::new() };

        if !p.equalities.is_empty() {
            for e in &p.equalities {
                let r = rows.next_row();
                for (v, c) in &e.terms {
                    rows.push(r, v.0, *c);
                }
                rows.b.push(-e.constant);
            }
            rows.cones.push(ZeroConeT(p.equalities.len()));
        }

        let mut nonneg = 0;
        for e in &p.inequalities {
            let r = rows.next_row();
            for (v, c) in &e.terms {
                rows.push(r, v.0, -c);
            }
            rows.b.push(e.constant);
            nonneg += 1;
        }
        for (k, bnd) in p.bounds.iter().enumerate() {
            if let Some(lo) = bnd.lower {
                let r = rows.next_row();
                rows.push(r, k, -1.0);
                rows.b.push(-lo);
                nonneg += 1;
            }
            if let Some(hi) = bnd.upper {
                let r = rows.next_row();
                rows.push(r, k, 1.0);
                rows.b.push(hi);
                nonneg += 1;
            }
        }
        if nonneg > 0 {
            rows.cones.push(NonnegativeConeT(nonneg));
        }

        for e in &p.psd {
            push_psd(&mut rows, e, &[]);
        }

        for (term, &off) in p.logdet.iter().zip(&aux_offsets) {
            let k = term.expr.dim();
            // Z lower triangle, stored column-major over (row ≥ col)
            let mut z_cols = Vec::new();
            let mut idx = 0;
            for c in 0..k {
                for r in c..k {
                    z_cols.push((r, c, off + idx));
                    idx += 1;
                }
            }
            let big = term.expr.embedded(2 * k, 0);
            let mut extra = Vec::new();
            for &(r, c, col) in &z_cols {
                let mut f = DMatrix::zeros(2 * k, 2 * k);
                f[(r, k + c)] = 1.0;
                f[(k + c, r)] = 1.0;
                if r == c {
                    f[(k + c, k + c)] = 1.0;
                }
                extra.push((col, f));
            }
            push_psd(&mut rows, &big, &extra);

            let t_off = off + svec_len(k);
            for i in 0..k {
                let diag_col = z_cols.iter().find(|z| z.0 == i && z.1 == i).unwrap().2;
                let r = rows.next_row();
                rows.push(r, t_off + i, -1.0);
                rows.b.extend([0.0, 1.0, 0.0]);
                rows.push(r + 2, diag_col, -1.0);
                rows.cones.push(ExponentialConeT());
                q[t_off + i] -= term.weight;
            }
        }

        let m = rows.b.len();
        let a = CscMatrix::new_from_triplets(m, total, rows.i.clone(), rows.j.clone(), rows.v.clone());
        (q, a, rows, total)
    }
}

impl ConicSolver for ClarabelSolver {
    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> SolverResult {
        let start = Instant::now();
        if !program.is_well_formed() {
            return SolverResult::failed(SolveStatus::NumericalFailure, 0.0, "program references undeclared variables".into());
        }
        let (q, a, rows, total) = self.build(program);
        let pmat = CscMatrix::zeros((total, total));
        let cs = DefaultSettings {
            verbose: self.verbose,
            max_iter: settings.max_iter,
            tol_feas: settings.feasibility_tol,
            tol_gap_abs: settings.gap_tol,
            tol_gap_rel: settings.gap_tol,
            tol_infeas_abs: settings.feasibility_tol,
            tol_infeas_rel: settings.feasibility_tol,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&pmat, &q, &a, &rows.b, &rows.cones, cs);
        solver.solve();
        let elapsed = start.elapsed().as_secs_f64();
        let sol = &solver.solution;
        let diag = format!("clarabel status {:?} after {} iterations", sol.status, sol.iterations);
        let values: Vec<f64> = sol.x[..program.num_vars()].to_vec();
        let optimal = |iterations| SolverResult {
            status: SolveStatus::Optimal,
            objective: Some(program.objective_value(&values)),
            values: Some(values.clone()),
            solve_seconds: elapsed,
            iterations,
            diagnostics: diag.clone(),
        };
        match sol.status {
            SolverStatus::Solved => optimal(sol.iterations),
            SolverStatus::AlmostSolved => {
                let candidate = optimal(sol.iterations);
                if verify(&candidate, program, 1e-6).passed {
                    candidate
                } else {
                    SolverResult::failed(SolveStatus::NumericalFailure, elapsed, diag)
                }
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolverResult::failed(SolveStatus::Infeasible, elapsed, diag)
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                SolverResult::failed(SolveStatus::Unbounded, elapsed, diag)
            }
            _ => SolverResult::failed(SolveStatus::NumericalFailure, elapsed, diag),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_order() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 4.0, 2.0, 3.0, 5.0, 4.0, 5.0, 6.0]);
        let s = svec(&m);
        let r2 = std::f64::consts::SQRT_2;
        assert_eq!(s, vec![1.0, 2.0 * r2, 3.0, 4.0 * r2, 5.0 * r2, 6.0]);
    }
}
