//! `sde-bridge` command-line front end.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or config
//! error. Failures are reported on standard error as a single JSON object.

mod args;
mod commands;
mod config;

use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};
use log::LevelFilter;

use args::{Cli, Command, ExperimentArgs};
use commands::CliError;
use config::{McKind, McRun, PredictRun};

fn level(name: &str) -> Option<LevelFilter> {
    name.parse().ok()
}

fn init_logging(cli_level: Option<&str>) {
    let filter = cli_level.and_then(level).unwrap_or(LevelFilter::Warn);
    let _ = env_logger::Builder::new().filter_level(filter).parse_default_env().format_timestamp(None).try_init();
}

/// Applies the config's `log_level` unless `--log-level` was given.
fn apply_config_level(cli_level: Option<&str>, config_level: &str) {
    if cli_level.is_none() {
        if let Some(l) = level(config_level) {
            log::set_max_level(l);
        }
    }
}

fn load_mc(args: &ExperimentArgs, threads: Option<usize>, kind: McKind) -> Result<McRun, CliError> {
    let text = config::read_config(&args.config).map_err(|e| CliError::Config(e.0))?;
    let file = config::parse_mc_file(&text).map_err(|e| CliError::Config(e.0))?;
    let mut run = config::resolve_mc(&file, kind).map_err(|e| CliError::Config(e.0))?;
    if let Some(seed) = args.seed {
        run.global.seed = seed;
        run.mc.seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        run.global.output_dir = dir.clone();
    }
    if threads.is_some() {
        run.global.threads = threads;
    }
    Ok(run)
}

fn load_predict(args: &ExperimentArgs, threads: Option<usize>) -> Result<PredictRun, CliError> {
    let text = config::read_config(&args.config).map_err(|e| CliError::Config(e.0))?;
    let file = config::parse_predict_file(&text).map_err(|e| CliError::Config(e.0))?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let mut run = config::resolve_predict(&file, base).map_err(|e| CliError::Config(e.0))?;
    if let Some(seed) = args.seed {
        run.global.seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        run.global.output_dir = dir.clone();
    }
    if threads.is_some() {
        run.global.threads = threads;
    }
    Ok(run)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.threads == Some(0) {
        return Err(CliError::Config(vec!["threads must be at least 1".into()]));
    }
    let cli_level = cli.log_level.as_deref();
    if let Some(l) = cli_level {
        if level(l).is_none() {
            return Err(CliError::Config(vec![format!("unknown log level '{l}'")]));
        }
    }
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Tune(a) => commands::tune(a),
        Command::Mc(a) => {
            let run = load_mc(a, cli.threads, McKind::Mc)?;
            apply_config_level(cli_level, &run.global.log_level);
            commands::mc(&run, McKind::Mc)
        }
        Command::Compare(a) => {
            let run = load_mc(a, cli.threads, McKind::Compare)?;
            apply_config_level(cli_level, &run.global.log_level);
            commands::mc(&run, McKind::Compare)
        }
        Command::Predict(a) => {
            let run = load_predict(a, cli.threads)?;
            apply_config_level(cli_level, &run.global.log_level);
            commands::predict(&run)
        }
    }
}

fn main() -> ExitCode {
    if std::env::args_os().len() <= 1 {
        let _ = Cli::command().write_help(&mut std::io::stderr());
        return ExitCode::from(2);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    init_logging(cli.log_level.as_deref());
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
