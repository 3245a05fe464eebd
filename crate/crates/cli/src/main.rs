mod args;
mod commands;
mod config;
mod error;

use clap::Parser;

use args::{Cli, Command};
use error::CliResult;

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Recommend(a) => commands::recommend(a),
        Command::Baseline(a) => commands::baseline(a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
