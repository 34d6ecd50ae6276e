use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod failure;

use failure::Failure;

/// Prediction intervals for group-level effects in linear mixed models.
#[derive(Debug, Parser, Serialize)]
#[command(name = "predim", version)]
struct Cli {
    /// Worker threads for contour grids and simulations [default: all cores].
    #[arg(long, global = true, env = "PREDIM_THREADS")]
    threads: Option<usize>,

    /// Directory receiving output files and the run manifest.
    #[arg(long, global = true, default_value = "predim-out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Fit variance components by REML and report the eigenstructure.
    Fit {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Tabulate a plausibility contour for plotting.
    Contour(ContourArgs),
    /// Compute a prediction interval.
    Predict(PredictArgs),
    /// Run a coverage study from a JSON configuration.
    Simulate {
        /// Study configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args, Serialize)]
struct DataArgs {
    /// CSV file with one row per observation.
    #[arg(long)]
    data: PathBuf,
    /// JSON column mapping; defaults to a random-intercept model.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Response column (ignored with --schema).
    #[arg(long, default_value = "response")]
    response: String,
    /// Grouping column (ignored with --schema).
    #[arg(long, default_value = "group")]
    group: String,
}

#[derive(Debug, Args, Serialize)]
struct TargetArgs {
    #[arg(long, value_enum, default_value_t = Target::GroupMean)]
    target: Target,
    /// Fixed-effect covariates of the new group, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<f64>>,
    /// Random-effect covariates of the new group, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    z: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Target {
    GroupMean,
    NewObs,
}

#[derive(Debug, Args, Serialize)]
struct JointArgs {
    /// Grid points for the variance ratio.
    #[arg(long, default_value_t = 100)]
    rho_points: usize,
    /// Retained sampler draws per grid point.
    #[arg(long, default_value_t = 5000)]
    draws: usize,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ContourMethod {
    Joint,
    Gen,
    AdjGen,
}

#[derive(Debug, Args, Serialize)]
struct ContourArgs {
    #[arg(long, value_enum)]
    method: ContourMethod,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    target: TargetArgs,
    #[command(flatten)]
    joint: JointArgs,
    /// Level of the interval reported with the diagnostics.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Number of grid points; odd counts include the centre.
    #[arg(long, default_value_t = 401)]
    points: usize,
    /// Half-width of the grid in natural scale units.
    #[arg(long, default_value_t = 6.0)]
    half_widths: f64,
    /// Bootstrap resamples for the standard error of the variance ratio.
    #[arg(long, default_value_t = 100)]
    delta_resamples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    /// Any interval method, e.g. student-t, gen-im, joint-im.
    #[arg(long, value_parser = commands::parse_method)]
    method: predim::intervals::Method,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    target: TargetArgs,
    #[command(flatten)]
    joint: JointArgs,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Bootstrap resamples for the bootstrap methods.
    #[arg(long, default_value_t = 500)]
    resamples: usize,
    /// Bootstrap resamples for the adjusted generalized method.
    #[arg(long, default_value_t = 100)]
    delta_resamples: usize,
    /// True variance pair "between,within", required by the oracle.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    truth: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Written next to every set of outputs.
#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'static str,
    config: &'a Cli,
    seed: Option<u64>,
    version: &'static str,
    threads: usize,
    wall_seconds: f64,
    outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

/// What a subcommand produced.
pub struct Outcome {
    pub seed: Option<u64>,
    pub outputs: Vec<PathBuf>,
    /// Non-reproducible details kept out of the main outputs.
    pub extra: Option<serde_json::Value>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return Failure::Usage(e.to_string().trim().to_string()).report(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let start = Instant::now();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    std::fs::create_dir_all(&cli.out)?;
    let (name, outcome) = match &cli.command {
        Command::Fit { data } => ("fit", commands::fit(data, &cli.out)?),
        Command::Contour(args) => ("contour", commands::contour(args, &cli.out)?),
        Command::Predict(args) => ("predict", commands::predict(args, &cli.out)?),
        Command::Simulate { config, seed } => {
            ("simulate", commands::simulate(config, *seed, &cli.out)?)
        }
    };
    let manifest_path = cli.out.join("manifest.json");
    let mut outputs = outcome.outputs;
    outputs.push(manifest_path.clone());
    let manifest = RunManifest {
        command: name,
        config: cli,
        seed: outcome.seed,
        version: env!("CARGO_PKG_VERSION"),
        threads: rayon::current_num_threads(),
        wall_seconds: start.elapsed().as_secs_f64(),
        outputs,
        extra: outcome.extra,
    };
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
