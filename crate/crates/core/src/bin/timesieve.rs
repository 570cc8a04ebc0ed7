use std::process::ExitCode;

fn main() -> ExitCode {
    match timesieve::cli::run(std::env::args_os()) {
        Ok(Some(path)) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", timesieve::cli::error_line(&e));
            ExitCode::FAILURE
        }
    }
}
