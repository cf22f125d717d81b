use std::io::{self, Write};
use std::process::ExitCode;

use clap::Parser;
use flcr::cli::{run, Cli};
use flcr::parallel::{build_pool, threads_from_env};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = threads_from_env().and_then(build_pool).and_then(|pool| {
        let mut buf = Vec::new();
        pool.install(|| run(&cli.command, &mut buf))?;
        let mut out = io::stdout().lock();
        out.write_all(&buf).and_then(|()| out.flush()).map_err(|e| flcr::Error::io("<stdout>", e))
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flcr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
