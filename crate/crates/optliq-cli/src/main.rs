//! Command-line front end: configuration ingestion, solver orchestration,
//! artifact persistence.

mod artifacts;
mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, Format};
use config::ScenarioConfig;

#[derive(Parser)]
#[command(
    name = "optliq",
    about = "Finite-fuel expected-utility liquidation: solvers, simulation, and property checks",
    version
)]
struct Cli {
    /// Scenario configuration (JSON).
    #[arg(short, long, global = true, default_value = "configs/default.json")]
    config: String,
    /// Overrides the simulation seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (also honored from OPTLIQ_THREADS; flag wins).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (defaults to the configuration's output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Data format for printed summaries.
    #[arg(long, global = true, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the model invariants and report measured residuals.
    Validate,
    /// Solve the two exponential benchmark problems.
    SolveCara {
        /// Time steps of the variational grid.
        #[arg(long, default_value_t = 2000)]
        steps: usize,
    },
    /// Run the backward induction and dump the value surface.
    SolveDp,
    /// Simulate the controlled system under a policy.
    Simulate {
        /// Control source: the dumped surface's feedback policy, or the
        /// lower-envelope benchmark strategy.
        #[arg(long, default_value = "surface", value_parser = ["surface", "cara"])]
        source: String,
        /// Directory holding surface.csv / surface.meta.json (defaults to
        /// the output directory).
        #[arg(long)]
        surface: Option<PathBuf>,
    },
    /// Run every property check and write the scoreboard.
    Verify,
    /// Vary one parameter and record the value against it.
    Sweep {
        /// One of: model.t model.b model.sigma impact.lambda impact.p utility.a
        param: String,
        /// Comma-separated values.
        values: String,
    },
    /// Render an SVG from previously written artifacts.
    Plot {
        /// One of: value-vs-param heatmap convergence
        kind: String,
        /// Input artifact (sweep.csv, surface directory, or layers.csv).
        #[arg(long)]
        input: PathBuf,
        /// Time layer for the heatmap (default: top).
        #[arg(long)]
        layer: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = cli.threads.or_else(|| {
        std::env::var("OPTLIQ_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        // Ignore failure: the global pool may already exist under tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let mut doc = ScenarioConfig::from_path(&cli.config)?;
    if let Some(seed) = cli.seed {
        doc.sim.seed = seed;
    }
    let scenario = doc.build()?;
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&scenario.output_dir));
    let format = match cli.format.as_str() {
        "json" => Format::Json,
        _ => Format::Csv,
    };

    match &cli.command {
        Command::Validate => commands::validate(&scenario, &format),
        Command::SolveCara { steps } => commands::solve_cara_cmd(&scenario, *steps, &out),
        Command::SolveDp => commands::solve_dp_cmd(&scenario, &out).map(|_| ()),
        Command::Simulate { source, surface } => {
            commands::simulate_cmd(&scenario, source, surface.as_deref(), &out, &format)
        }
        Command::Verify => commands::verify_cmd(&scenario, &out, &format),
        Command::Sweep { param, values } => {
            let parsed: Result<Vec<f64>, _> =
                values.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let parsed = parsed
                .map_err(|e| CliError::Usage(format!("cannot parse sweep values: {e}")))?;
            if parsed.is_empty() {
                return Err(CliError::Usage("sweep needs at least one value".into()));
            }
            commands::sweep_cmd(&scenario, param, &parsed, &out)
        }
        Command::Plot { kind, input, layer } => commands::plot_cmd(kind, input, *layer, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
