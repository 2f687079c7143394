use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flowlab_cli::{load_config, resolve_threads, run, CliError, RunOptions, EXIT_CONFIG, EXIT_PASS};
use flowlab_core::field::catalogue;

#[derive(Parser)]
#[command(name = "flowlab", version, about = "Flows under Gaussian measure: config-driven experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write <prefix>.report.json and <prefix>.table.csv.
    Run {
        config: PathBuf,
        /// Output path prefix (defaults to the config's output_prefix, then the config file stem).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; falls back to FLOWLAB_THREADS.
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// List the built-in fields.
    Catalogue,
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("flowlab: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match cli.command {
        Command::Run { config, out, threads, seed } => {
            let threads = match resolve_threads(threads) {
                Ok(t) => t,
                Err(e) => return fail(&e),
            };
            match run(&config, &RunOptions { out, threads, seed }) {
                Ok(summary) => {
                    for c in summary.report.checks.iter() {
                        let status = match (c.pass, c.enforced) {
                            (true, _) => "pass",
                            (false, true) => "FAIL",
                            (false, false) => "info",
                        };
                        println!("{status:4}  {}: {:e} (bound {:e})", c.name, c.value, c.bound);
                    }
                    println!("report: {}", summary.report_path.display());
                    println!("table:  {}", summary.table_path.display());
                    ExitCode::from(summary.exit_code() as u8)
                }
                Err(e) => fail(&e),
            }
        }
        Command::Validate { config } => match load_config(&config, None) {
            Ok(cfg) => {
                println!("ok: {:?} in dimension {}", cfg.experiment, cfg.dim);
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Catalogue => {
            println!("constant             {{\"kind\": \"constant\", \"params\": {{\"v\": [..]}}}}  b ≡ v");
            println!("linear               {{\"kind\": \"linear\", \"params\": {{\"a\": [[..], ..]}}}}  b(x) = A x");
            println!("rotation             {{\"kind\": \"rotation\", \"params\": {{\"omega\": 1.0}}}}  planar rotation, dim >= 2");
            for (name, doc) in catalogue::NAMED {
                println!("{name:20} {{\"kind\": \"custom_named\", \"params\": {{\"name\": \"{name}\"}}}}  {doc}");
            }
            ExitCode::SUCCESS
        }
    }
}
