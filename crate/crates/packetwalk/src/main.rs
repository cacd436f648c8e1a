use std::process::ExitCode;

fn main() -> ExitCode {
    packetwalk::cli::run()
}
