use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ilicast::eval::Aggregation;
use ilicast_cli::config::parse_methods;
use ilicast_cli::{commands, exit_code, Loaded, Overrides, RunConfig, EXIT_GRADCHECK_FAILED};

#[derive(Parser)]
#[command(name = "ilicast", version, about = "Train, evaluate and run weekly ILI forecasters")]
struct Cli {
    /// JSON run configuration; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restricts the run to one state (overrides `state`/`states`).
    #[arg(long, global = true)]
    state: Option<String>,
    /// `all` or a comma-separated list, e.g. `seasonal_naive,ar_ls`.
    #[arg(long, global = true)]
    methods: Option<String>,
    #[arg(long, global = true, value_parser = |s: &str| s.parse::<Aggregation>())]
    aggregation: Option<Aggregation>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the neural methods and write checkpoints, histories and logs.
    Train,
    /// Forecast from the latest window of each state with each checkpoint.
    Forecast {
        #[arg(long)]
        weeks: Option<usize>,
    },
    /// Score all selected methods on the test region and write reports.
    Evaluate,
    /// Compare tape gradients with finite differences on a fresh model.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn run(cli: Cli) -> Result<u8, ilicast::Error> {
    let overrides = Overrides {
        seed: cli.seed,
        state: cli.state,
        methods: cli
            .methods
            .as_deref()
            .map(parse_methods)
            .transpose()
            .map_err(ilicast::Error::Config)?,
        aggregation: cli.aggregation,
    };
    let loaded = match &cli.config {
        Some(path) => Loaded::from_file(path, &overrides)?,
        None => {
            let mut config = RunConfig::default();
            config.apply(&overrides);
            Loaded::new(config, PathBuf::new())?
        }
    };
    match cli.command {
        Command::Train => {
            for o in commands::cmd_train(&loaded)? {
                println!("{}", o.checkpoint.display());
            }
        }
        Command::Forecast { weeks } => {
            for path in commands::cmd_forecast(&loaded, weeks)? {
                println!("{}", path.display());
            }
        }
        Command::Evaluate => {
            let reports = commands::cmd_evaluate(&loaded)?;
            print!("{}", ilicast::eval::markdown_tables(&reports));
        }
        Command::Gradcheck { inject_fault } => {
            let outcome = commands::cmd_gradcheck(&loaded.config, inject_fault)?;
            print!("{}", outcome.table(10));
            if !outcome.passed {
                return Ok(EXIT_GRADCHECK_FAILED);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
