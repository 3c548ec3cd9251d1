//! `mivs`: operator command line.
//!
//! Exit codes: 0 success, 1 bench saw errors, 2 usage, 3 I/O,
//! 4 parse or validation, 5 unknown series, 6 connection failure.

mod bench;
mod catalog;
mod error;
mod ingest;
mod phantom;
mod render;
mod serve;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use error::CliError;

#[derive(Parser)]
#[command(name = "mivs", version, about = "Medical image volume server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an analytic phantom as a DICOM series.
    Phantom(phantom::Args),
    /// Scan a directory once and report what was indexed.
    Ingest(ingest::Args),
    /// Render a reconstruction of a series to a PNG file.
    Render(render::Args),
    /// Run the HTTP server until interrupted.
    Serve(serve::Args),
    /// Drive concurrent render requests against a running server.
    Bench(bench::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Phantom(a) => phantom::run(a),
        Command::Ingest(a) => ingest::run(a),
        Command::Render(a) => render::run(a),
        Command::Serve(a) => serve::run(a),
        Command::Bench(a) => bench::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mivs: {e}");
            ExitCode::from(e.code())
        }
    }
}
