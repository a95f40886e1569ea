//! Surrogate training and episode runs for the three vehicle experiments.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shiftguard_core::adapt::{run_episode, solve_adaptation, AdaptProblem, Anchor, Controller, EpisodeLog};
use shiftguard_core::conic::{ConicSolver, SolverSettings};
use shiftguard_core::envs::{collect_transitions, make_env, make_pi_star, sample_reference, EnvKind, NoiseMode, Variant};
use shiftguard_core::pso::pso_adapt_step;
use shiftguard_core::relu::Activation;
use shiftguard_core::surrogate::SurrogatePair;
use shiftguard_core::train::{
    rmse, rmse_embedded, train_cov, train_cov_embedded, train_joint_embedded, train_mean, Architecture, TrainReport, Transition,
};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::model::{load_surrogate, save_surrogate};
use crate::records::{dataset_csv, episode_csv, report_csv, summary_csv, write, SummaryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Adapted,
    Unadapted,
    Pso,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Adapted => "adapted",
            Mode::Unadapted => "unadapted",
            Mode::Pso => "pso",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "adapted" => Some(Mode::Adapted),
            "unadapted" => Some(Mode::Unadapted),
            "pso" => Some(Mode::Pso),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSurrogate {
    pub surrogate: SurrogatePair,
    pub data: Vec<Transition>,
    pub reports: Vec<(&'static str, TrainReport)>,
    /// RMSE on fresh transitions drawn with the noise at its mean.
    pub validation_rmse: f64,
}

/// Seed-specific rng: independent streams for data, validation and episodes.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn train_surrogate(cfg: &ExperimentConfig, seed: u64) -> Result<TrainedSurrogate> {
    let kind = cfg.kind();
    let pi = make_pi_star(kind)?;
    let mut env = make_env(kind, Variant::Deploy)?;
    let data = collect_transitions(env.as_mut(), pi.as_ref(), &cfg.excitation(), cfg.surrogate.samples, &mut seeded(seed, 1))?;
    let tc = cfg.train_config(seed);
    let cov_tc = shiftguard_core::train::TrainConfig { epochs: cfg.training.cov_epochs, ..tc.clone() };
    let cov_arch = Architecture::relu(&cfg.surrogate.cov_hidden);
    let mut reports = Vec::new();
    let s = &cfg.surrogate;
    let mut sur = if s.embedder_hidden.is_empty() {
        let (mean, rep) = train_mean(&data, &cfg.mean_architecture(), &tc)?;
        reports.push(("mean", rep));
        let (cov, rep) = train_cov(&data, &mean, &cov_arch, &cov_tc)?;
        reports.push(("cov", rep));
        SurrogatePair::new(mean, cov)
    } else {
        let (emb, mean, rep) = train_joint_embedded(&data, &s.embedder_hidden, s.embed_dim, &cfg.mean_architecture(), &tc)?;
        reports.push(("mean", rep));
        let (cov, rep) = train_cov_embedded(&data, &emb, &mean, &cov_arch, &cov_tc)?;
        reports.push(("cov", rep));
        let mut p = SurrogatePair::new(mean, cov);
        p.embedder = Some(emb);
        p
    };
    if !s.deep_hidden.is_empty() {
        let arch = Architecture { hidden: s.deep_hidden.clone(), activation: Activation::Tanh, linear_skip: true };
        let (deep, rep) = train_mean(&data, &arch, &tc)?;
        reports.push(("deep", rep));
        sur.deep_net = Some(deep);
    }
    env.set_noise_mode(NoiseMode::Mean);
    let count = (cfg.surrogate.samples / 5).max(100);
    let val = collect_transitions(env.as_mut(), pi.as_ref(), &cfg.excitation(), count, &mut seeded(seed, 2))?;
    let validation_rmse = match &sur.embedder {
        Some(e) => rmse_embedded(e, &sur.mean_net, &val)?,
        None => rmse(&sur.mean_net, &val)?,
    };
    Ok(TrainedSurrogate { surrogate: sur, data, reports, validation_rmse })
}

pub fn model_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output_dir.join("models").join(format!("seed_{seed}"))
}

pub fn write_trained(dir: &Path, t: &TrainedSurrogate) -> Result<()> {
    save_surrogate(&t.surrogate, dir)?;
    write(&dir.join("dataset.csv"), &dataset_csv(&t.data)?)?;
    for (name, rep) in &t.reports {
        write(&dir.join(format!("{name}_report.csv")), &report_csv(rep)?)?;
    }
    Ok(())
}

/// Loads the seed's models when present, otherwise trains and stores them.
pub fn obtain_surrogate(cfg: &ExperimentConfig, seed: u64) -> Result<SurrogatePair> {
    let dir = model_dir(cfg, seed);
    if dir.join("mean.json").exists() {
        return load_surrogate(&dir);
    }
    let t = train_surrogate(cfg, seed)?;
    write_trained(&dir, &t)?;
    Ok(t.surrogate)
}

pub fn reference(kind: EnvKind, horizon: usize) -> Result<Vec<nalgebra::DVector<f64>>> {
    let pi = make_pi_star(kind)?;
    let mut env = make_env(kind, Variant::Train)?;
    Ok(sample_reference(env.as_mut(), pi.as_ref(), horizon)?)
}

/// Rounds per PSO step whose wall time matches one adaptation solve.
pub fn calibrate_pso<S: ConicSolver>(
    cfg: &ExperimentConfig,
    sur: &SurrogatePair,
    reference: &[nalgebra::DVector<f64>],
    solver: &S,
    settings: &SolverSettings,
) -> Result<(usize, f64)> {
    if cfg.pso.iterations > 0 {
        return Ok((cfg.pso.iterations, f64::NAN));
    }
    let env = make_env(cfg.kind(), Variant::Deploy)?;
    let (lo, hi) = (env.lower(), env.upper());
    let probes: Vec<usize> = (0..reference.len().saturating_sub(1)).step_by((reference.len() / 4).max(1)).take(3).collect();
    let mut sdp = 0.0;
    for &t in &probes {
        let cov = nalgebra::DMatrix::identity(sur.state_dim(), sur.state_dim()) * cfg.adaptation.initial_variance;
        let region = sur.state_region(&reference[t], &cov, cfg.confidence)?;
        let p = AdaptProblem {
            delta: cfg.delta,
            anchor: Anchor::Linearized(None),
            ..AdaptProblem::new(sur.mean_net.clone(), region, reference[t + 1].clone(), lo.clone(), hi.clone())
        };
        let start = Instant::now();
        let _ = solve_adaptation(solver, settings, &p);
        sdp += start.elapsed().as_secs_f64();
    }
    sdp /= probes.len().max(1) as f64;
    let rounds = 20;
    let pc = cfg.pso_config(0, rounds);
    let start = Instant::now();
    for &t in &probes {
        pso_adapt_step(sur, &reference[t], &reference[t + 1], &lo, &hi, cfg.pso.deep, &pc)?;
    }
    let per_round = start.elapsed().as_secs_f64() / (probes.len().max(1) * rounds) as f64;
    let iterations = ((sdp / per_round.max(1e-12)).round() as usize).clamp(1, cfg.pso.max_iterations);
    Ok((iterations, sdp))
}

pub fn run_seed<S: ConicSolver>(
    cfg: &ExperimentConfig,
    mode: Mode,
    seed: u64,
    sur: &SurrogatePair,
    pso_iterations: usize,
    solver: &S,
    settings: &SolverSettings,
) -> Result<EpisodeLog> {
    let kind = cfg.kind();
    let pi = make_pi_star(kind)?;
    let reference = reference(kind, cfg.horizon)?;
    let mut env = make_env(kind, Variant::Deploy)?;
    let controller = match mode {
        Mode::Adapted => Controller::Adapted,
        Mode::Unadapted => Controller::Unadapted,
        Mode::Pso => Controller::Pso { config: cfg.pso_config(seed, pso_iterations), deep: cfg.pso.deep },
    };
    let start = Instant::now();
    let clock = move || start.elapsed().as_secs_f64();
    let mut rng = seeded(seed, 3);
    Ok(run_episode(env.as_mut(), sur, pi.as_ref(), &reference, &controller, &cfg.episode_config(settings.clone()), solver, &mut rng, &clock)?)
}

/// Maps `f` over `items` on up to `available_parallelism` scoped threads, keeping order.
pub fn fan_out<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| scope.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub mode: Mode,
    pub logs: Vec<(u64, EpisodeLog)>,
    pub pso_iterations: Option<usize>,
}

impl RunOutput {
    pub fn summaries(&self) -> Vec<SummaryRow> {
        self.logs.iter().map(|(s, l)| SummaryRow::from_log(*s, l)).collect()
    }
}

pub fn run_mode<S: ConicSolver + Sync>(cfg: &ExperimentConfig, mode: Mode, solver: &S, settings: &SolverSettings) -> Result<RunOutput> {
    let surrogates: Vec<(u64, SurrogatePair)> =
        cfg.seeds.iter().map(|&s| obtain_surrogate(cfg, s).map(|p| (s, p))).collect::<Result<_>>()?;
    let mut pso_iterations = None;
    let mut jobs = Vec::new();
    for (seed, sur) in &surrogates {
        let iters = if mode == Mode::Pso {
            let reference = reference(cfg.kind(), cfg.horizon)?;
            let (k, _) = calibrate_pso(cfg, sur, &reference, solver, settings)?;
            pso_iterations = Some(k);
            k
        } else {
            1
        };
        jobs.push((*seed, sur, iters));
    }
    let logs = fan_out(&jobs, |(seed, sur, iters)| run_seed(cfg, mode, *seed, sur, *iters, solver, settings).map(|l| (*seed, l)));
    Ok(RunOutput { mode, logs: logs.into_iter().collect::<Result<_>>()?, pso_iterations })
}

pub fn write_run(cfg: &ExperimentConfig, out: &RunOutput) -> Result<PathBuf> {
    let env = make_env(cfg.kind(), Variant::Deploy)?;
    let (n, m) = (env.state_dim(), env.action_dim());
    let dir = cfg.output_dir.join(out.mode.name());
    for (seed, log) in &out.logs {
        write(&dir.join(format!("episode_seed_{seed}.csv")), &episode_csv(log, n, m)?)?;
    }
    let with_gap = cfg.kind() == EnvKind::Acc;
    write(&dir.join("summary.csv"), &summary_csv(&out.summaries(), with_gap)?)?;
    Ok(dir)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
