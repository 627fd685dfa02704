mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use commands::{run, Cli, UsageError};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<UsageError>() {
            Some(u) => {
                eprintln!("error: {u}\n\nFor more information, try '--help'.");
                ExitCode::from(2)
            }
            None => {
                let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
                eprintln!("{}", serde_json::json!({ "error": chain.join(": ") }));
                ExitCode::from(1)
            }
        },
    }
}
