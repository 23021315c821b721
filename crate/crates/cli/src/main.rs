//! `fbpt`: critical point, trajectories, bifurcation sweeps, density frames
//! and parameter studies for the feedback-controlled condensate model.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Context, StudyArgs, SweepArgs};
use crate::config::{Format, RunConfig, StudyVariable};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "fbpt", version, about = "Feedback-induced phase transition of a condensate in a controlled lattice")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Photon-counting seed; overrides `feedback.rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps and studies.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Critical feedback parameter, critical frequencies and occupations.
    Critical(Common),
    /// Integrate from the uniform state; writes the trajectory and a summary.
    Simulate(Common),
    /// Steady-state branches over a range of F.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        f_min: Option<f64>,
        #[arg(long)]
        f_max: Option<f64>,
        #[arg(long)]
        n_points: Option<usize>,
        /// Add square-root approximation columns.
        #[arg(long)]
        with_approx: bool,
        /// Skip the stability probe.
        #[arg(long)]
        no_classify: bool,
    },
    /// Real-space density frames along a trajectory.
    Density(Common),
    /// Settling times over a list of τ or K_d values.
    Study {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        variable: Option<StudyVariable>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
        /// Gains paired with the values.
        #[arg(long, value_delimiter = ',')]
        gains: Option<Vec<f64>>,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(f) = common.format {
        cfg.output.format = f;
    }
    if let Some(dir) = &common.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = common.seed {
        commands::apply_seed(&mut cfg, seed);
    }
    Ok(cfg)
}

fn with_pool<T>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError>
where
    T: Send,
{
    match jobs {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("--jobs must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Critical(common) => commands::critical(&Context { cfg: load(&common)? }),
        Command::Simulate(common) => commands::simulate(&Context { cfg: load(&common)? }),
        Command::Density(common) => commands::density(&Context { cfg: load(&common)? }),
        Command::Sweep {
            common,
            f_min,
            f_max,
            n_points,
            with_approx,
            no_classify,
        } => {
            let mut cfg = load(&common)?;
            let base = cfg.sweep.clone();
            let pick = |flag: Option<f64>, from: Option<f64>, name: &str| {
                flag.or(from)
                    .ok_or_else(|| CliError::Usage(format!("--{name} is required without a [sweep] section")))
            };
            let args = SweepArgs {
                f_min: pick(f_min, base.as_ref().map(|s| s.f_min), "f-min")?,
                f_max: pick(f_max, base.as_ref().map(|s| s.f_max), "f-max")?,
                n_points: n_points
                    .or(base.as_ref().map(|s| s.n_points))
                    .ok_or_else(|| CliError::Usage("--n-points is required without a [sweep] section".into()))?,
                classify: !no_classify && base.as_ref().is_none_or(|s| s.classify),
                with_approx: with_approx || base.as_ref().is_some_and(|s| s.with_approx),
            };
            cfg.sweep = Some(config::SweepConfig {
                f_min: args.f_min,
                f_max: args.f_max,
                n_points: args.n_points,
                classify: args.classify,
                with_approx: args.with_approx,
            });
            let ctx = Context { cfg };
            with_pool(common.jobs, || commands::sweep(&ctx, &args))?
        }
        Command::Study {
            common,
            variable,
            values,
            gains,
        } => {
            let mut cfg = load(&common)?;
            let base = cfg.study.clone();
            let variable = variable
                .or(base.as_ref().map(|s| s.variable))
                .ok_or_else(|| CliError::Usage("--variable is required without a [study] section".into()))?;
            let values = values
                .or(base.as_ref().map(|s| s.values.clone()))
                .ok_or_else(|| CliError::Usage("--values is required without a [study] section".into()))?;
            let gains = gains.or(base.and_then(|s| s.gains));
            let args = StudyArgs {
                variable,
                values,
                gains,
            };
            cfg.study = Some(config::StudyConfig {
                variable: args.variable,
                values: args.values.clone(),
                gains: args.gains.clone(),
            });
            let ctx = Context { cfg };
            with_pool(common.jobs, || commands::study(&ctx, &args))?
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fbpt: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
