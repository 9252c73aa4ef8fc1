use std::process::ExitCode;

fn main() -> ExitCode {
    oracle_grasp::cli::run()
}
