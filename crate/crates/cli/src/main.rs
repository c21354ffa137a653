mod commands;
mod config;
mod output;

use std::process::ExitCode;

use config::{parse_config, CliError};

fn main() -> ExitCode {
    let config = match parse_config(std::env::args_os()) {
        Ok(c) => c,
        Err(CliError::Usage(e)) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
        Err(CliError::Config(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let outcome = match commands::run(&config.task) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {} failed: {e}", config.task.name());
            return ExitCode::from(1);
        }
    };
    match output::write_outputs(&config, &outcome) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: cannot write to {}: {e}", config.output_dir.display());
            return ExitCode::from(1);
        }
    }
    if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        for f in &outcome.failures {
            eprintln!("diagnostic: {f}");
        }
        ExitCode::from(1)
    }
}
