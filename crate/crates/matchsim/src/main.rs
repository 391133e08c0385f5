use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(matchsim::harness::cli_main(std::env::args_os()) as u8)
}
