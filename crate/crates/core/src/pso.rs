//! Particle swarm baseline for box-constrained residual minimization.

use alloc::vec::Vec;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::surrogate::SurrogatePair;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsoConfig {
    pub swarm: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Evaluation rounds including the initial one; each costs `swarm` evaluations.
    pub iterations: usize,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self { swarm: 20, inertia: 0.729, cognitive: 1.494, social: 1.494, iterations: 10, seed: 0 }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.swarm < 2 {
            return Err(Error::Config("swarm size must be at least 2".into()));
        }
        if !(self.inertia >= 0.0 && self.cognitive >= 0.0 && self.social >= 0.0) {
            return Err(Error::Config("swarm weights must be nonnegative".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iteration budget must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub best: DVector<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// Global best value after each round.
    pub history: Vec<f64>,
}

fn reflect(x: f64, v: f64, lo: f64, hi: f64) -> (f64, f64) {
    if lo == hi {
        return (lo, 0.0);
    }
    let mut x = x;
    let mut v = v;
    if x > hi {
        x = 2.0 * hi - x;
        v = -v;
    } else if x < lo {
        x = 2.0 * lo - x;
        v = -v;
    }
    (x.clamp(lo, hi), v)
}

pub fn pso_minimize<F: FnMut(&DVector<f64>) -> f64>(
    mut objective: F,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    cfg: &PsoConfig,
) -> Result<PsoResult> {
    cfg.validate()?;
    check_dim(lower.len(), upper.len())?;
    if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
        return Err(Error::Domain("lower bound exceeds upper bound".into()));
    }
    let d = lower.len();
    let width = upper - lower;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut evaluations = 0;
    let mut eval = |x: &DVector<f64>, count: &mut usize| {
        *count += 1;
        let f = objective(x);
        if f.is_nan() {
            f64::INFINITY
        } else {
            f
        }
    };

    let mut pos: Vec<DVector<f64>> = (0..cfg.swarm)
        .map(|_| DVector::from_fn(d, |i, _| lower[i] + rng.random::<f64>() * width[i]))
        .collect();
    let mut vel: Vec<DVector<f64>> = (0..cfg.swarm)
        .map(|_| DVector::from_fn(d, |i, _| (rng.random::<f64>() - 0.5) * width[i] * 0.2))
        .collect();
    let mut pbest = pos.clone();
    let mut pval: Vec<f64> = pos.iter().map(|x| eval(x, &mut evaluations)).collect();
    let mut g = 0;
    for k in 1..cfg.swarm {
        if pval[k] < pval[g] {
            g = k;
        }
    }
    let mut gbest = pbest[g].clone();
    let mut gval = pval[g];
    let mut history = alloc::vec![gval];

    for _ in 1..cfg.iterations {
        for k in 0..cfg.swarm {
            for i in 0..d {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = cfg.inertia * vel[k][i]
                    + cfg.cognitive * r1 * (pbest[k][i] - pos[k][i])
                    + cfg.social * r2 * (gbest[i] - pos[k][i]);
                let (x, v) = reflect(pos[k][i] + v, v, lower[i], upper[i]);
                pos[k][i] = x;
                vel[k][i] = v;
            }
            let f = eval(&pos[k], &mut evaluations);
            if f < pval[k] {
                pval[k] = f;
                pbest[k] = pos[k].clone();
                if f < gval {
                    gval = f;
                    gbest = pos[k].clone();
                }
            }
        }
        history.push(gval);
    }
    Ok(PsoResult { best: gbest, value: gval, evaluations, history })
}

/// PSO on `a ↦ ‖target − μ(s, a)‖` over the actuator box.
///
/// `deep` selects the comparison model instead of the ReLU mean model.
pub fn pso_adapt_step(
    surrogate: &SurrogatePair,
    s: &DVector<f64>,
    target: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    deep: bool,
    cfg: &PsoConfig,
) -> Result<PsoResult> {
    check_dim(surrogate.state_dim(), s.len())?;
    check_dim(surrogate.state_dim(), target.len())?;
    check_dim(surrogate.action_dim(), lower.len())?;
    let embedded = surrogate.embed(s)?;
    pso_minimize(
        |a| {
            let pred = if deep {
                surrogate.compare_predict(s, a)
            } else {
                surrogate.mean_net.forward(&crate::train::concat(&embedded, a))
            };
            pred.map(|p| (target - p).norm()).unwrap_or(f64::INFINITY)
        },
        lower,
        upper,
        cfg,
    )
}
