use std::process::ExitCode;

fn main() -> ExitCode {
    fitzsolve_cli::main_with(std::env::args_os())
}
