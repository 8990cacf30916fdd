use std::process::ExitCode;

use clap::Parser;

use lesion_bench::{run, threads_from_env, Cli, CliError};

fn configure_threads() -> Result<(), CliError> {
    if let Some(n) = threads_from_env()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input("invalid_threads", e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(&cli)) {
        Ok(diagnostics) => {
            for d in diagnostics {
                eprintln!("{d}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.exit_code())
        }
    }
}
