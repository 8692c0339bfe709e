use std::process::ExitCode;

use clap::Parser;
use urt_cli::{run, Cli};

fn main() -> ExitCode {
    if let Some(n) = std::env::var("URT_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("urt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
