use clap::{Args, Parser, Subcommand};
use fhm_cli::{preset, ExperimentConfig, Pipeline};
use fhm_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fhm", about = "Sphere-map energy laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped preset name: hedgehog-dirichlet, hedgehog-f1, cylinder,
    /// two-hedgehogs.
    #[arg(long)]
    preset: Option<String>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: verify, solve/build, analyze, stratify, beta, cover.
    Run(CommonArgs),
    /// Minimize the energy and write the solved map.
    Solve(CommonArgs),
    /// Density profiles and monotonicity statistics.
    Analyze(AnalyzeArgs),
    /// Singular detection, defect tables and memberships.
    Stratify(AnalyzeArgs),
    /// Jones β₂ numbers and Reifenberg ratios of the detected set.
    Beta(AnalyzeArgs),
    /// Covering refinement and Minkowski content.
    Cover(AnalyzeArgs),
    /// Check the integrand assumptions.
    VerifyIntegrand(CommonArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Analyze a previously saved map instead of rebuilding or solving.
    #[arg(long)]
    map: Option<PathBuf>,
}

fn load_config(args: &CommonArgs) -> Result<(ExperimentConfig, String), Error> {
    let text = match (&args.config, &args.preset) {
        (Some(path), None) => std::fs::read_to_string(path)?,
        (None, Some(name)) => preset(name)
            .ok_or_else(|| Error::Domain(format!("unknown preset {name:?}")))?
            .to_string(),
        _ => {
            return Err(Error::Domain(
                "exactly one of --config or --preset is required".into(),
            ))
        }
    };
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok((cfg, text))
}

enum Failure {
    /// Configuration could not be parsed or validated.
    Config(Error),
    /// A pipeline stage failed.
    Stage(Error),
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let common = match &cli.command {
        Command::Run(c) | Command::Solve(c) | Command::VerifyIntegrand(c) => c,
        Command::Analyze(a) | Command::Stratify(a) | Command::Beta(a) | Command::Cover(a) => {
            &a.common
        }
    };
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Stage(Error::Internal(e.to_string())))?;
    }
    let (cfg, text) = load_config(common).map_err(Failure::Config)?;
    let pipeline = Pipeline::new(cfg, text, common.out.as_deref()).map_err(Failure::Stage)?;
    match cli.command {
        Command::Run(_) => stage(pipeline.run()),
        Command::Solve(_) => {
            if !pipeline.cfg.solve.enabled {
                return Err(Failure::Config(Error::Domain(
                    "solve stage is disabled in this config".into(),
                )));
            }
            stage(pipeline.prepare_map(None).map(|_| ()))
        }
        Command::VerifyIntegrand(_) => {
            let (ok, text) = pipeline.verify_integrand().map_err(Failure::Stage)?;
            println!("{text}");
            if ok {
                Ok(())
            } else {
                Err(Failure::Stage(Error::Domain(
                    "integrand assumptions failed".into(),
                )))
            }
        }
        Command::Analyze(a) => {
            let prepared = stage(pipeline.prepare_map(a.map.as_deref()))?;
            stage(pipeline.analyze(&prepared).map(|_| ()))
        }
        Command::Stratify(a) => {
            let prepared = stage(pipeline.prepare_map(a.map.as_deref()))?;
            stage(pipeline.stratify(&prepared).map(|_| ()))
        }
        Command::Beta(a) => {
            let prepared = stage(pipeline.prepare_map(a.map.as_deref()))?;
            let strat = stage(pipeline.stratify(&prepared))?;
            stage(pipeline.beta_stage(&prepared, &strat.singular))
        }
        Command::Cover(a) => {
            let prepared = stage(pipeline.prepare_map(a.map.as_deref()))?;
            let strat = stage(pipeline.stratify(&prepared))?;
            stage(pipeline.cover_stage(&prepared, &strat.singular))
        }
    }
}

fn stage<T>(r: Result<T, Error>) -> Result<T, Failure> {
    r.map_err(Failure::Stage)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
