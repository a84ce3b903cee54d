use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mts_core::cli::{run, sweep, CliError, RunConfig, SweepAxis};

#[derive(Parser)]
#[command(name = "mts", version, about = "Multi-time-step coupled Newmark scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its per-step CSV
    Run { config: PathBuf },
    /// Run one scenario per value along an axis and write a summary CSV
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma separated; eta values are integers or colon separated sets such as 5:5:5:1
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => RunConfig::from_file(&config).and_then(|c| {
            let s = run(&c)?;
            println!("{}: {} steps, t = {}", c.output_path().display(), s.steps, s.final_time);
            Ok(())
        }),
        Command::Sweep { config, axis, values } => RunConfig::from_file(&config).and_then(|c| {
            let p = sweep(&c, axis, &values)?;
            println!("{}", p.display());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_byte(&e))
        }
    }
}

fn exit_byte(e: &CliError) -> u8 {
    e.exit_code() as u8
}
