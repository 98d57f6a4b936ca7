//! `drc`: generate synthetic crowdsourcing data, train aggregation models,
//! run estimator sweeps and check the estimator identities.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Arg, ArgAction, Command};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self::Runtime(msg.into())
    }

    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<drc_core::Error> for CliError {
    fn from(e: drc_core::Error) -> Self {
        match e {
            drc_core::Error::Config(_) => Self::Usage(e.to_string()),
            other => Self::Runtime(other.to_string()),
        }
    }
}

fn cli() -> Command {
    Command::new("drc")
        .about("Doubly robust label aggregation for crowdsourcing")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("threads")
                .long("threads")
                .global(true)
                .value_name("N")
                .value_parser(clap::value_parser!(usize))
                .help("cap on worker threads"),
        )
        .arg(
            Arg::new("json")
                .long("json")
                .global(true)
                .action(ArgAction::SetTrue)
                .help("machine-readable report on stdout"),
        )
        .subcommand(config::with_keys(
            Command::new("gen").about("simulate a worker pool, annotations and true labels"),
            &config::gen_keys(),
        ))
        .subcommand(config::with_keys(
            Command::new("train").about("fit Dawid-Skene parameters and per-worker imitators"),
            &config::train_keys(),
        ))
        .subcommand(config::with_keys(
            Command::new("eval").about("run an accuracy-versus-cost sweep"),
            &config::eval_keys(),
        ))
        .subcommand(config::with_keys(
            Command::new("verify").about("check estimator bias and variance identities by enumeration"),
            &config::verify_keys(),
        ))
}

fn run() -> Result<(), CliError> {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion
                | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => Ok(()),
                _ => Err(CliError::usage("")),
            };
        }
    };
    if let Some(&n) = matches.get_one::<usize>("threads") {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::runtime(format!("cannot size thread pool: {e}")))?;
    }
    let json = matches.get_flag("json");
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let (command, keys): (&'static str, _) = match name {
        "gen" => ("gen", config::gen_keys()),
        "train" => ("train", config::train_keys()),
        "eval" => ("eval", config::eval_keys()),
        "verify" => ("verify", config::verify_keys()),
        other => unreachable!("unknown subcommand {other}"),
    };
    let resolved = config::Resolved::from_matches(command, keys, sub)?;
    let echo = resolved.echo();
    eprint!("{echo}");
    if let Some(path) = sub.get_one::<String>("echo-config") {
        std::fs::write(path, &echo).map_err(|e| CliError::runtime(format!("{path}: {e}")))?;
    }
    match command {
        "gen" => commands::gen(&resolved, json),
        "train" => commands::train(&resolved, json),
        "eval" => commands::eval(&resolved, json),
        _ => commands::verify(&resolved, json),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(e.code())
        }
    }
}
