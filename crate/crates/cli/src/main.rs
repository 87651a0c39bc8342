mod args;
mod commands;
mod output;

use std::process::ExitCode;

use causal_mdl::{Error, ErrorKind};
use clap::Parser;

use args::{Cli, Command};

fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Input => 2,
        ErrorKind::Config => 3,
        ErrorKind::Computation => 4,
    }
}

fn run(cli: Cli) -> causal_mdl::Result<()> {
    if let Some(jobs) = cli.global.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    }
    match cli.command {
        Command::Generate(a) => commands::generate(&cli.global, a),
        Command::Discover(a) => commands::discover(&cli.global, a),
        Command::Mdl(a) => commands::mdl(&cli.global, a),
        Command::Ssl(a) => commands::ssl(&cli.global, a),
        Command::Da(a) => commands::da(&cli.global, a),
        Command::Meta(a) => commands::meta(&cli.global, a),
        Command::Report(a) => commands::report(&cli.global, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
