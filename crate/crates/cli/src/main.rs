use std::process::ExitCode;

fn main() -> ExitCode {
    pointcount::main_with_args(std::env::args_os())
}
