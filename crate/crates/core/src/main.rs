use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nlhomog::cli::{self, OUT_DIR_ENV, THREADS_ENV};

#[derive(Parser)]
#[command(name = "nlhom", version, about = "Homogenization studies for non-local random Dirichlet forms")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's output.dir).
        #[arg(long, env = OUT_DIR_ENV)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long, env = THREADS_ENV)]
        threads: Option<usize>,
        /// Omit wall-clock times so reports are byte-identical across runs.
        #[arg(long)]
        deterministic: bool,
    },
    /// Parse and validate a config, printing the resolved form.
    Validate { config: PathBuf },
    /// Write per-metric plot data from a report.
    Plotdata {
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &PathBuf) -> nlhomog::Result<cli::ExperimentConfig> {
    cli::parse_config(&std::fs::read_to_string(path)?)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = match args.command {
        Command::Run {
            config,
            out,
            threads,
            deterministic,
        } => load(&config).and_then(|cfg| {
            nlhomog::par::init_threads(threads);
            let report = cli::run(&cfg, deterministic)?;
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            cli::write_outputs(&report, &dir)?;
            for c in &report.checks {
                println!("{}: {} ({})", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
            }
            println!("report written to {}", dir.join(&cfg.output.report).display());
            Ok(report.passed)
        }),
        Command::Validate { config } => load(&config).and_then(|cfg| {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(true)
        }),
        Command::Plotdata { report, out } => cli::read_report(&report).and_then(|r| {
            for p in cli::emit_plotdata(&r.results, &out)? {
                println!("{}", p.display());
            }
            Ok(true)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
