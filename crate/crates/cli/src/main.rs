mod commands;
mod problem;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use commands::Verdict;
use problem::{ModeInput, ProblemFile, SearchInput};

#[derive(Parser)]
#[command(name = "dosechoice", version, about = "Dose bounds and minimax-regret dosage choice from trial evidence")]
struct Cli {
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Leave elapsed time out of the output so reruns compare byte for byte.
    #[arg(long, global = true)]
    no_timings: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Clinical,
    Allocate,
}

#[derive(Clone, Copy, ValueEnum)]
enum Search {
    Auto,
    Full,
    CoarseToFine,
}

#[derive(Subcommand)]
enum Command {
    /// Test whether the evidence is consistent with monotone dose response.
    Check {
        problem: PathBuf,
        /// Subject-level CSV (dose,d,e[,id]) used instead of the `arms` table.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Sharp bounds on outcome probabilities and net welfare.
    Bounds {
        problem: PathBuf,
        /// A single dose, or `all`.
        #[arg(long, default_value = "all")]
        dose: String,
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Minimax-regret dose or allocation.
    Decide {
        problem: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Clinical)]
        mode: Mode,
        /// Grid resolution for allocations.
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long, value_enum)]
        search: Option<Search>,
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Regret of the as-if rule over simulated trials.
    Simulate {
        problem: PathBuf,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reproduce the reference two-dose example and compare with known values.
    Illustrate {
        #[arg(long, hide = true, allow_negative_numbers = true)]
        perturb_welfare: Option<f64>,
    },
}

fn run(cli: Cli) -> anyhow::Result<(report::ResultDocument, Verdict)> {
    match cli.command {
        Command::Check { problem, records } => commands::check(ProblemFile::load(&problem)?, records.as_deref()),
        Command::Bounds { problem, dose, records } => {
            let dose = match dose.as_str() {
                "all" => None,
                n => Some(n.parse().map_err(|_| anyhow::anyhow!("--dose must be a dose number or `all`, got `{n}`"))?),
            };
            commands::bounds(ProblemFile::load(&problem)?, records.as_deref(), dose)
        }
        Command::Decide { problem, mode, resolution, search, records } => {
            let mode = match mode {
                Mode::Clinical => ModeInput::Clinical,
                Mode::Allocate => ModeInput::Allocation,
            };
            let search = search.map(|s| match s {
                Search::Auto => SearchInput::Auto,
                Search::Full => SearchInput::Full,
                Search::CoarseToFine => SearchInput::CoarseToFine,
            });
            commands::decide(ProblemFile::load(&problem)?, records.as_deref(), mode, resolution, search)
        }
        Command::Simulate { problem, replications, seed } => {
            commands::simulate(ProblemFile::load(&problem)?, replications, seed)
        }
        Command::Illustrate { perturb_welfare } => commands::illustrate(perturb_welfare),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (format, timings) = (cli.format, !cli.no_timings);
    let start = Instant::now();
    let (mut doc, verdict) = match run(cli) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    if timings {
        doc.diagnostics.elapsed_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    match format {
        Format::Text => print!("{}", report::render_text(&doc)),
        Format::Json => match serde_json::to_string_pretty(&doc) {
            Ok(s) => println!("{s}"),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
    }
    match verdict {
        Verdict::Ok => ExitCode::SUCCESS,
        Verdict::Inconsistent => ExitCode::from(2),
        Verdict::ChecksFailed => ExitCode::from(1),
    }
}
