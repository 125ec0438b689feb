use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use probe_tomo::cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for path in &outcome.written {
                eprintln!("wrote {}", path.display());
            }
            if let Some(metrics) = &outcome.metrics {
                let text = serde_json::to_string_pretty(metrics).expect("JSON value");
                // A closed pipe (e.g. `| head`) is not an error of the run.
                let _ = writeln!(std::io::stdout(), "{text}");
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
