use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use epilogue_cli::error::{EXIT_OK, EXIT_USAGE};
use epilogue_cli::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    let stdout = std::io::stdout();
    match epilogue_cli::run(cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code())
        }
    }
}
