use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gopo::verify::{run_suite, Fault, Level};
use gopo_bench::config::ExperimentConfig;
use gopo_bench::experiment::{cmd_diversity, cmd_gen, cmd_run, read_results, RESULTS_FILE};
use gopo_bench::plot::{fit_slopes, points_csv, slopes_csv, summarize, svg};
use gopo_bench::BenchError;

#[derive(Parser)]
#[command(name = "gopo-bench", about = "Offline policy optimization experiments on finite MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the MDP, class and datasets for every (K, seed).
    Gen { config: PathBuf },
    /// Run every (algorithm, K, seed) cell and write results.csv.
    Run { config: PathBuf },
    /// Run the self-check suite.
    Verify {
        #[arg(long, value_enum, default_value = "quick")]
        level: LevelArg,
        /// Inject a known bug to confirm the suite fails.
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Fit log-log slopes of a results table and draw them.
    Plot {
        results: PathBuf,
        /// Defaults to the directory of the results file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coverage measures of the comparator for every dataset.
    Diversity { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Quick,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    SignFlip,
}

fn write(path: PathBuf, text: &str) -> Result<(), BenchError> {
    std::fs::write(&path, text).map_err(|e| gopo::error::Error::io(path, e).into())
}

fn execute(cli: Cli) -> Result<ExitCode, BenchError> {
    match cli.command {
        Command::Gen { config } => {
            let config = ExperimentConfig::load(&config)?;
            let dir = config.output_dir();
            let files = cmd_gen(&config, &dir)?;
            println!("wrote {} files under {}", files.len(), dir.display());
        }
        Command::Run { config } => {
            let config = ExperimentConfig::load(&config)?;
            let dir = config.output_dir();
            let rows = cmd_run(&config, &dir)?;
            let failed = rows.iter().filter(|r| !r.failures.is_empty()).count();
            println!("{} cells, {failed} failed; {}", rows.len(), dir.join(RESULTS_FILE).display());
        }
        Command::Verify { level, inject_fault } => {
            let level = match level {
                LevelArg::Quick => Level::Quick,
                LevelArg::Full => Level::Full,
            };
            let fault = match inject_fault {
                Some(FaultArg::SignFlip) => Fault::FlipDecompositionSign,
                None => Fault::None,
            };
            let report = run_suite(level, fault)?;
            print!("{report}");
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Plot { results, out } => {
            let rows = read_results(&results)?;
            let dir = out.unwrap_or_else(|| results.parent().map(PathBuf::from).unwrap_or_default());
            std::fs::create_dir_all(&dir).map_err(|e| gopo::error::Error::io(&dir, e))?;
            let points = summarize(&rows);
            let fits = fit_slopes(&points);
            write(dir.join("medians.csv"), &points_csv(&points))?;
            write(dir.join("slopes.csv"), &slopes_csv(&fits))?;
            write(dir.join("suboptimality.svg"), &svg(&points, &fits))?;
            print!("{}", slopes_csv(&fits));
        }
        Command::Diversity { config } => {
            let config = ExperimentConfig::load(&config)?;
            let dir = config.output_dir();
            let table = cmd_diversity(&config, &dir)?;
            println!("{} rows; {}", table.lines().count() - 1, dir.join(gopo_bench::experiment::DIVERSITY_FILE).display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
