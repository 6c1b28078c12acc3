use std::process::ExitCode;

fn main() -> ExitCode {
    melganvc::cli::run(std::env::args_os())
}
