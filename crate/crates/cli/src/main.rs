//! `oog-gen`: split, pretrain, meta-train, evaluate and query GEN models.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors (including missing input files).

mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};

use config::{keys, parse_file, ConfigError, Settings};

/// Keys set through the global flags rather than `--section.key`.
const GLOBAL: [(&str, &str); 3] = [("seed", "run.seed"), ("threads", "run.threads"), ("out", "run.out")];

pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<oog_gen::GenError> for CliError {
    fn from(e: oog_gen::GenError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn key_args() -> Vec<Arg> {
    keys()
        .into_iter()
        .filter(|k| !k.name.starts_with("run."))
        .map(|k| {
            let shown = if k.default.is_empty() { "none".to_string() } else { k.default.clone() };
            Arg::new(k.name)
                .long(k.name)
                .value_name("VALUE")
                .allow_hyphen_values(true)
                .help(format!("{} [default: {shown}]", k.help))
                .help_heading("Configuration keys")
        })
        .collect()
}

fn cli() -> Command {
    let sub = |name: &'static str, about: &'static str| Command::new(name).about(about).args(key_args());
    Command::new("oog-gen")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Few-shot out-of-graph link prediction with graph extrapolation networks")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .global(true)
                .help("Key/value config file; flags override it"),
        )
        .arg(Arg::new("seed").long("seed").value_name("U64").global(true).help("Seed for all randomness [default: 0]"))
        .arg(
            Arg::new("threads")
                .long("threads")
                .value_name("N")
                .global(true)
                .help("Evaluation worker threads [default: 1]"),
        )
        .arg(Arg::new("out").long("out").value_name("DIR").global(true).help("Output directory [default: out]"))
        .subcommand(sub("split", "Split a triplet file into in-graph and unseen meta-sets"))
        .subcommand(sub("pretrain", "Pretrain DistMult embeddings on the in-graph"))
        .subcommand(sub("train", "Meta-train the embedding layers on simulated unseen entities"))
        .subcommand(sub("eval", "Rank the held-out triplets of a meta-set"))
        .subcommand(sub("predict", "Complete partial triplets for entities given by a few support triplets"))
        .after_help("Log verbosity is read from GEN_LOG (error, warn, info, debug, trace).")
        .disable_help_subcommand(true)
}

fn settings(m: &ArgMatches) -> Result<Settings, CliError> {
    let file = match m.get_one::<String>("config") {
        Some(p) => parse_file(&PathBuf::from(p))?,
        None => BTreeMap::new(),
    };
    let mut flags = BTreeMap::new();
    for k in keys().into_iter().filter(|k| !k.name.starts_with("run.")) {
        if let Some(v) = m.get_one::<String>(k.name) {
            flags.insert(k.name.to_string(), v.clone());
        }
    }
    for (flag, key) in GLOBAL {
        if let Some(v) = m.get_one::<String>(flag) {
            flags.insert(key.to_string(), v.clone());
        }
    }
    Ok(Settings::layer(file, flags))
}

fn run() -> Result<(), CliError> {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                Err(CliError::Usage(String::new()))
            } else {
                Ok(())
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let s = settings(sub)?;
    match name {
        "split" => commands::split(s),
        "pretrain" => commands::pretrain(s),
        "train" => commands::train(s),
        "eval" => commands::eval(s),
        "predict" => commands::predict(s),
        _ => unreachable!("unknown subcommand {name}"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GEN_LOG", "info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            if !m.is_empty() {
                eprintln!("error: {m}");
            }
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }
}
