use std::process::ExitCode;

use clap::Parser;
use stemscan::args::Cli;
use stemscan::config::expand_argv;

fn main() -> ExitCode {
    let argv = match expand_argv(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    match stemscan::run(cli.command) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
