//! Monte-Carlo containment check of a fixed-action residual bound.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use shiftguard_core::conic::{ConicSolver, SolverSettings};
use shiftguard_core::deep_sdp::{bound_residual_fixed_action, ActionRegion, BoundOptions};
use shiftguard_core::gauss::Ellipsoid;
use shiftguard_core::relu::ReluNetwork;
use shiftguard_core::train::concat;

use crate::error::{Error, Result};

/// Region file: shapes are lists of rows; a missing action shape means a point action.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub state_center: Vec<f64>,
    pub state_shape: Vec<Vec<f64>>,
    pub action_center: Vec<f64>,
    #[serde(default)]
    pub action_shape: Option<Vec<Vec<f64>>>,
    pub target: Vec<f64>,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Usage(format!("region: {what} must be a non-empty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl RegionSpec {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Usage(format!("region: {e}")))
    }

    pub fn regions(&self) -> Result<(Ellipsoid, ActionRegion, DVector<f64>)> {
        let usage = |e: shiftguard_core::Error| Error::Usage(format!("region: {e}"));
        let s = Ellipsoid::new(DVector::from_column_slice(&self.state_center), matrix(&self.state_shape, "state_shape")?).map_err(usage)?;
        let c = DVector::from_column_slice(&self.action_center);
        let a = match &self.action_shape {
            None => ActionRegion::Point(c),
            Some(rows) => ActionRegion::Region(Ellipsoid::new(c, matrix(rows, "action_shape")?).map_err(usage)?),
        };
        Ok((s, a, DVector::from_column_slice(&self.target)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub samples: usize,
    pub violations: usize,
    /// Largest `rᵀ Ω r` seen; at most `1 + tol` when sound.
    pub worst_form: f64,
    /// `½ log det Ω_R`.
    pub log_volume: f64,
    pub solve_ms: f64,
}

impl VerifyReport {
    pub fn lines(&self) -> String {
        format!(
            "samples {}\nviolations {}\nworst_quadratic_form {}\nbound_log_volume {}\nsolve_ms {}\n",
            self.samples, self.violations, self.worst_form, self.log_volume, self.solve_ms
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub fn verify_bound<S: ConicSolver>(
    solver: &S,
    settings: &SolverSettings,
    net: &ReluNetwork,
    spec: &RegionSpec,
    opts: &BoundOptions,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<VerifyReport> {
    let (s, a, target) = spec.regions()?;
    let start = Instant::now();
    let bound = bound_residual_fixed_action(solver, settings, net, &s, &a, &target, opts)?;
    let solve_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..samples {
        let sv = if k % 4 == 0 { s.sample_boundary(&mut rng) } else { s.sample_uniform(&mut rng) };
        let av = match &a {
            ActionRegion::Point(p) => p.clone(),
            ActionRegion::Region(e) if k % 4 == 0 => e.sample_boundary(&mut rng),
            ActionRegion::Region(e) => e.sample_uniform(&mut rng),
        };
        let r = net.forward(&concat(&sv, &av))? - &target;
        let q = r.dot(&(&bound.omega * &r));
        worst = worst.max(q);
        if q > 1.0 + tol {
            violations += 1;
        }
    }
    Ok(VerifyReport { samples, violations, worst_form: worst, log_volume: 0.5 * bound.log_det_shape(), solve_ms })
}
