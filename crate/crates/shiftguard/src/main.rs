use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shiftguard::backend::{settings_from_env, ClarabelSolver};
use shiftguard::config::ExperimentConfig;
use shiftguard::core::deep_sdp::BoundOptions;
use shiftguard::core::envs::EnvKind;
use shiftguard::experiment::{fan_out, model_dir, run_mode, train_surrogate, write_run, write_trained, Mode};
use shiftguard::plot::{plot_episodes, Series};
use shiftguard::verify::{verify_bound, RegionSpec};
use shiftguard::{model, Error, Result};

#[derive(Parser)]
#[command(name = "shiftguard", version, about = "Certified action adaptation under distribution shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect deployment transitions and train the surrogate networks for every seed.
    TrainSurrogate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run closed-loop episodes and write episode and summary CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// adapted, unadapted or pso
        #[arg(long, default_value = "adapted")]
        mode: String,
    },
    /// Bound a network's residual set and check it by sampling.
    VerifyBound {
        #[arg(long)]
        model: PathBuf,
        /// JSON region file (state_center, state_shape, action_center, action_shape, target).
        #[arg(long)]
        region: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        interval_bounds: bool,
    },
    /// Overlay episode CSVs into one SVG per state coordinate.
    Plot {
        #[arg(long, default_value = "plots")]
        out: PathBuf,
        #[arg(required = true)]
        episodes: Vec<PathBuf>,
    },
    /// Configuration helpers.
    Config {
        #[arg(long)]
        print_defaults: bool,
        #[arg(long, default_value = "dubins")]
        experiment: String,
    },
}

fn train(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let results = fan_out(&cfg.seeds, |&seed| train_surrogate(&cfg, seed).map(|t| (seed, t)));
    for r in results {
        let (seed, t) = r?;
        let dir = model_dir(&cfg, seed);
        write_trained(&dir, &t)?;
        println!("seed {seed}: validation_rmse {} -> {}", t.validation_rmse, dir.display());
    }
    Ok(())
}

fn run(config: &Path, mode: &str) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let mode = Mode::from_name(mode).ok_or_else(|| Error::Usage(format!("unknown mode {mode:?}")))?;
    let out = run_mode(&cfg, mode, &ClarabelSolver::default(), &settings_from_env())?;
    let dir = write_run(&cfg, &out)?;
    if let Some(k) = out.pso_iterations {
        println!("pso rounds per step {k}");
    }
    for row in out.summaries() {
        println!("seed {} mean_residual {} max_residual {}", row.seed, row.mean_residual, row.max_residual);
    }
    for (seed, log) in &out.logs {
        if let Some(msg) = &log.aborted {
            return Err(Error::Format(format!("seed {seed}: episode aborted: {msg}")));
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn verify(model_path: &Path, region: &Path, samples: usize, seed: u64, interval_bounds: bool) -> Result<()> {
    let net = model::load(model_path)?;
    let text = std::fs::read_to_string(region).map_err(|e| Error::Usage(format!("{}: {e}", region.display())))?;
    let spec = RegionSpec::parse(&text)?;
    let opts = BoundOptions { interval_bounds, ..BoundOptions::default() };
    let report = verify_bound(&ClarabelSolver::default(), &settings_from_env(), &net, &spec, &opts, samples, seed, 1e-6)?;
    print!("{}", report.lines());
    if report.violations > 0 {
        return Err(Error::Format(format!("{} of {} samples violate the bound", report.violations, report.samples)));
    }
    Ok(())
}

fn plot(out: &Path, episodes: &[PathBuf]) -> Result<()> {
    let series: Vec<Series> = episodes.iter().map(|p| Series::read(p)).collect::<Result<_>>()?;
    for p in plot_episodes(&series, out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainSurrogate { config } => train(&config),
        Command::Run { config, mode } => run(&config, &mode),
        Command::VerifyBound { model, region, samples, seed, interval_bounds } => verify(&model, &region, samples, seed, interval_bounds),
        Command::Plot { out, episodes } => plot(&out, &episodes),
        Command::Config { print_defaults, experiment } => match EnvKind::from_name(&experiment) {
            Some(kind) if print_defaults => {
                print!("{}", ExperimentConfig::defaults(kind).to_toml());
                Ok(())
            }
            Some(_) => Err(Error::Usage("config: nothing to do (try --print-defaults)".into())),
            None => Err(Error::Usage(format!("unknown experiment {experiment:?}"))),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
