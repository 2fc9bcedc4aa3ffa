use std::process::ExitCode;

fn main() -> ExitCode {
    wsaw_cli::run(std::env::args_os())
}
