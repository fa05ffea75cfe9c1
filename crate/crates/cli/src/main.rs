use std::io;
use std::process::ExitCode;

use smartaudit_cli::{run, Runtime};
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(io::stderr)
        .init();
    let code = run(
        std::env::args_os(),
        &Runtime::from_process(),
        &mut io::stdout(),
        &mut io::stderr(),
    );
    ExitCode::from(code)
}
