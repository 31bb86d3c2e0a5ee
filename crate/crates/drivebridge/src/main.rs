use std::process::ExitCode;

fn main() -> ExitCode {
    drivebridge::cli::main()
}
