use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(tfa_cli::run(std::env::args_os()))
}
