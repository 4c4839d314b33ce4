use std::process::ExitCode;

use clap::Parser;
use mdforge::app::{build_deps, Profile};
use mdforge::cli::{Cli, Command};
use mdforge::commands::{dispatch, load_config, CmdError};
use tracing_subscriber::EnvFilter;

fn run(cli: &Cli) -> Result<bool, CmdError> {
    let cfg = load_config(cli)?;
    if let Command::Serve(a) = &cli.command {
        let listen = a.listen.clone().unwrap_or_else(|| cfg.service.listen.clone());
        let deps = build_deps(&cfg, Profile::resolve(cli.profile))?;
        mdforge::service::serve(cfg, deps, &listen).map_err(|e| CmdError::Failed(e.to_string()))?;
        return Ok(true);
    }
    let out = dispatch(cli, &cfg)?;
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&out.json).expect("output serializes"));
    } else {
        print!("{}", out.text);
    }
    Ok(!out.failed)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("MDFORGE_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("mdforge: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
