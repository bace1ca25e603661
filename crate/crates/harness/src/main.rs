//! Command-line entry point for the localization experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use risloc_harness::{
    aggregate, presets, run_bounds, run_experiment, write_outputs, ExperimentSpec, HarnessError,
    RecordFormat, Summary,
};

#[derive(Parser)]
#[command(
    name = "risloc",
    about = "RIS-aided SISO localization: Monte-Carlo experiments and error bounds",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for RecordFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => RecordFormat::Csv,
            Format::Json => RecordFormat::Json,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment spec (JSON).
    spec: PathBuf,
    /// Output directory for records and summary.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the experiment seed from the spec.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Record file format.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment: synthesize, add noise, estimate, bound.
    Run(RunArgs),
    /// Bounds-only sweep (no estimator, no noise realizations).
    Bounds(RunArgs),
    /// Validate a spec file; prints warnings for soft issues.
    Validate {
        /// Experiment spec (JSON).
        spec: PathBuf,
    },
    /// Run the built-in desk-scale arc preset.
    Demo {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

const EXIT_INVALID_SPEC: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn load_spec(path: &std::path::Path) -> Result<ExperimentSpec, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        HarnessError::InvalidSpec(format!("cannot read {}: {e}", path.display()))
    })?;
    ExperimentSpec::from_json(&text)
}

fn exit_for(err: &HarnessError) -> ExitCode {
    match err {
        HarnessError::InvalidSpec(_) => ExitCode::from(EXIT_INVALID_SPEC),
        HarnessError::Runtime(_) => ExitCode::from(EXIT_RUNTIME),
    }
}

fn with_thread_pool<T>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<T, HarnessError> + Send,
) -> Result<T, HarnessError>
where
    T: Send,
{
    match threads {
        None => f(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::Runtime(e.to_string()))?;
            pool.install(f)
        }
    }
}

fn print_summary(summary: &Summary) {
    println!(
        "{:<16} {:>8} {:>6} {:>12} {:>12} {:>12} {:>12}",
        "sweep", "trials", "fail", "rmse_pos[m]", "peb[m]", "rmse_vb", "rmse_vr"
    );
    for s in &summary.per_sweep {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<16} {:>8} {:>6} {:>12} {:>12} {:>12} {:>12}",
            s.sweep_value,
            s.n_trials,
            s.n_failed,
            f(s.rmse_position),
            f(s.mean_peb),
            f(s.rmse_v_b),
            f(s.rmse_v_r)
        );
    }
}

fn execute(spec: &ExperimentSpec, args_out: &std::path::Path, format: Format, bounds_only: bool)
    -> Result<(), HarnessError>
{
    let records = if bounds_only { run_bounds(spec)? } else { run_experiment(spec)? };
    let summary = aggregate(&spec.name, spec.seeds.experiment, &records);
    let (records_path, summary_path) =
        write_outputs(args_out, spec, &records, &summary, format.into())?;
    print_summary(&summary);
    println!("records: {}", records_path.display());
    println!("summary: {}", summary_path.display());
    Ok(())
}

fn validate_spec(path: &std::path::Path) -> Result<(), HarnessError> {
    let spec = load_spec(path)?;
    let warnings = spec.validate()?;
    println!("spec '{}' is valid", spec.name);
    for w in warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn run_with_spec(args: &RunArgs, bounds_only: bool) -> Result<(), HarnessError> {
    let mut spec = load_spec(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seeds.experiment = seed;
    }
    with_thread_pool(args.threads, || execute(&spec, &args.out, args.format, bounds_only))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), HarnessError> = match cli.command {
        Command::Run(args) => run_with_spec(&args, false),
        Command::Bounds(args) => run_with_spec(&args, true),
        Command::Validate { spec } => validate_spec(&spec),
        Command::Demo { out, seed, threads, format } => {
            let mut spec = presets::demo();
            if let Some(seed) = seed {
                spec.seeds.experiment = seed;
            }
            with_thread_pool(threads, || execute(&spec, &out, format, false))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
