use std::process::ExitCode;

fn main() -> ExitCode {
    reefnet::init_logging();
    match reefnet::run(std::env::args()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
