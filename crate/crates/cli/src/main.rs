use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    let code = eopt_cli::run(std::env::args_os(), &mut io::stdout());
    ExitCode::from(code as u8)
}
