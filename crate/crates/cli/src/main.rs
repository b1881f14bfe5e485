use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use log::error;

use cfdiff::harness::{self, RunConfig};
use cfdiff::sim::TrialSpec;
use cfdiff::survival::EstimatorKind;

#[derive(Parser, Debug)]
#[command(name = "cfdiff", version, about = "Function-weighted diffusion metrics for local treatment effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cross-validation repeats.
    #[arg(long, global = true)]
    repeats: Option<usize>,
    #[arg(long, global = true, value_enum)]
    estimator: Option<Estimator>,
    /// Recommendation threshold in units of the estimate spread.
    #[arg(long = "c-threshold", global = true)]
    c_threshold: Option<f64>,
    /// Dataset CSV (`id,<features>,treatment,time,event`).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Ground-truth CSV (`id,true_effect,propensity`).
    #[arg(long, global = true)]
    truth: Option<PathBuf>,
    /// Model directory written by `fit`.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// New points for `extend`.
    #[arg(long, global = true)]
    points: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic trial.
    Simulate {
        /// Model used when the config has no `[trial]` table.
        #[arg(long = "trial", value_enum, default_value_t = Model::Sphere)]
        trial: Model,
        /// Number of patients.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Learn the function-weighted metric and its reference decomposition.
    Fit,
    /// Repeated 80/20 sub-sampling validation.
    Validate,
    /// Group test patients by agreement with the estimated effect.
    Recommend,
    /// Embed new points and estimate their effects.
    Extend,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Estimator {
    Moments,
    Partial,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Model {
    Sphere,
    Propensity,
    Random,
}

fn build_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        if let Some(t) = cfg.trial.as_mut() {
            t.seed = s;
        }
    }
    if let Some(o) = &cli.out {
        cfg.paths.out = Some(o.clone());
    }
    if let Some(r) = cli.repeats {
        cfg.repeats = r;
    }
    if let Some(e) = cli.estimator {
        cfg.estimator = match e {
            Estimator::Moments => EstimatorKind::Moments,
            Estimator::Partial => EstimatorKind::PartialLikelihood,
        };
    }
    if let Some(c) = cli.c_threshold {
        cfg.c_threshold = c;
    }
    for (flag, slot) in [
        (&cli.dataset, &mut cfg.paths.dataset),
        (&cli.truth, &mut cfg.paths.truth),
        (&cli.model, &mut cfg.paths.model),
        (&cli.points, &mut cfg.paths.points),
    ] {
        if let Some(p) = flag {
            *slot = Some(p.clone());
        }
    }
    if let Command::Simulate { trial, n } = &cli.command {
        let spec = cfg.trial.get_or_insert_with(|| {
            let n = n.unwrap_or(10_000);
            match trial {
                Model::Sphere => TrialSpec::sphere(n, cfg.seed),
                Model::Propensity => TrialSpec::propensity(n, cfg.seed),
                Model::Random => TrialSpec::random(n, cfg.seed),
            }
        });
        if let Some(n) = n {
            spec.n = *n;
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = build_config(cli)?;
    let out = cfg.out_dir();
    match cli.command {
        Command::Simulate { .. } => {
            harness::cmd_simulate(&cfg)?;
        }
        Command::Fit => {
            harness::cmd_fit(&cfg)?;
        }
        Command::Validate => {
            harness::cmd_validate(&cfg)?;
        }
        Command::Recommend => {
            harness::cmd_recommend(&cfg)?;
        }
        Command::Extend => {
            let est = harness::cmd_extend(&cfg)?;
            println!("extended {} points to {}", est.len(), out.join("extension.csv").display());
            return Ok(());
        }
    }
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap_or_default();
    print!("{report}");
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<cfdiff::Error>() {
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
