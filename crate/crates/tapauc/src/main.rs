use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(tapauc::cli::cli_main())
}
