use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match lpm_cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(c) = e.downcast_ref::<clap::Error>() {
                if matches!(c.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                    c.exit();
                }
            }
            let line = format!("{e:#}");
            let first = line.lines().find(|l| !l.trim().is_empty()).unwrap_or("failed");
            eprintln!("lpm: {}", first.trim_start_matches("error: "));
            ExitCode::FAILURE
        }
    }
}
