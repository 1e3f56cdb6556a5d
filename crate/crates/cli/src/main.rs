use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ntk_asgd::experiments::{self, load_config, ExperimentKind, Override, RunOptions};
use ntk_asgd::Error;

#[derive(Parser)]
#[command(name = "ntk-asgd", version, about = "Averaged SGD, random-feature NTKs and their spectra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Empirical and analytic NTK spectra with decay fits.
    Spectrum(RunArgs),
    /// Source-condition norms of eigenbasis targets under each operator.
    SourceNorm(RunArgs),
    /// Learning-rate exponent of the kernel trainer.
    RateCheck(RunArgs),
    /// Network vs kernel predictor gap over a width sweep.
    EquivCheck(RunArgs),
    /// Output-, input- and both-layer training on eigenbasis targets.
    Layerwise(RunArgs),
    /// A single training run with its learning curve.
    Train(RunArgs),
    /// Closed-form ReLU kernels against Monte Carlo estimates.
    ValidateKernel(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rebase the config's seed list to SEED, SEED+1, ...
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Validate the config and print the resolved parameters.
    #[arg(long)]
    dry_run: bool,
    /// Record wall time in the sidecar.
    #[arg(long)]
    timing: bool,
    /// `key=value` overrides, dotted keys for nested fields.
    overrides: Vec<String>,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::Spectrum(a) => (ExperimentKind::SpectrumFigure, a),
            Command::SourceNorm(a) => (ExperimentKind::SourceNorm, a),
            Command::RateCheck(a) => (ExperimentKind::RateCheck, a),
            Command::EquivCheck(a) => (ExperimentKind::EquivalenceSweep, a),
            Command::Layerwise(a) => (ExperimentKind::LayerwiseComparison, a),
            Command::Train(a) => (ExperimentKind::Train, a),
            Command::ValidateKernel(a) => (ExperimentKind::ValidateKernel, a),
        }
    }
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<(), Error> {
    let overrides = args
        .overrides
        .iter()
        .map(|s| Override::parse(s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cfg = load_config(kind, args.config.as_deref(), &overrides)?;
    if let Some(seed) = args.seed {
        cfg.rebase_seeds(seed);
    }
    cfg.validate()?;
    if args.dry_run {
        print!("{}", experiments::parameter_table(&cfg));
        return Ok(());
    }
    if args.jobs == Some(0) {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.jobs {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let opts = RunOptions {
        out_dir: args.out,
        overrides,
        timing: args.timing,
        jobs: args.jobs,
    };
    let result = pool.install(|| experiments::run_and_write(&cfg, &opts))?;
    println!("{}", serde_json::to_string_pretty(&result.outcome.report).expect("serializable"));
    for p in result.tables.iter().chain([&result.report, &result.sidecar]) {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().command.split();
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{kind}]: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
