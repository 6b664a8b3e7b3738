use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(flipforge_cli::run(std::env::args_os()))
}
