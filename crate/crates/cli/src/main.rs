use std::process::ExitCode;

use clap::Parser;

use qnoise_cli::args::Cli;
use qnoise_cli::{commands, EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK } as u8);
        }
    };
    let result = cli.into_config().and_then(|cfg| commands::run(&cfg));
    match result {
        Ok(manifest) => {
            for check in manifest.checks.iter().filter(|c| !c.passed) {
                eprintln!("check failed: {}: {}", check.name, check.detail);
            }
            for out in &manifest.outputs {
                println!("{}  {}", out.sha256, out.path.display());
            }
            ExitCode::from(if manifest.passed() { EXIT_OK } else { EXIT_CHECK_FAILED } as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
