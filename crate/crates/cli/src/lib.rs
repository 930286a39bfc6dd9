//! Command-line front end: `synth`, `register`, `evaluate`, `spectrum`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 solver failure.

mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{RunConfig, KEYS};
use error::CliError;

pub const THREADS_ENV: &str = "SEQREG_THREADS";

fn path_arg(name: &'static str, value: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name(value)
        .value_parser(clap::value_parser!(PathBuf))
        .help(help)
}

fn with_keys(mut cmd: Command) -> Command {
    cmd = cmd.arg(path_arg("config", "FILE", "key = value configuration file; flags override it"));
    for (key, help) in KEYS {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(key.replace('_', "-"))
                .value_name("VALUE")
                .allow_negative_numbers(true)
                .help(*help),
        );
    }
    cmd
}

pub fn command() -> Command {
    Command::new("seqreg")
        .about("Groupwise registration of 2D image sequences")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("synth")
                .about("Generate a synthetic stack with ground-truth displacements")
                .arg(path_arg("spec", "FILE", "synthesis spec (key = value); defaults if omitted"))
                .arg(path_arg("out", "DIR", "output directory").required(true)),
        )
        .subcommand(with_keys(
            Command::new("register")
                .about("Register a stack and write frames, fields, and reports")
                .arg(path_arg("in", "MANIFEST", "stack manifest").required(true))
                .arg(path_arg("out", "DIR", "output directory").required(true)),
        ))
        .subcommand(with_keys(
            Command::new("evaluate")
                .about("Endpoint error and SqN of estimated fields against ground truth")
                .arg(path_arg("in", "MANIFEST", "the unregistered stack").required(true))
                .arg(path_arg("truth", "DIR", "directory of ground-truth .sqnf fields").required(true))
                .arg(
                    path_arg("est", "DIR", "register output directory; repeat to compare methods")
                        .required(true)
                        .action(ArgAction::Append),
                )
                .arg(path_arg("out", "DIR", "output directory").required(true)),
        ))
        .subcommand(with_keys(
            Command::new("spectrum")
                .about("Run the SqN solver and write only the singular-value trace")
                .arg(path_arg("in", "MANIFEST", "stack manifest").required(true))
                .arg(path_arg("out", "DIR", "output directory").required(true)),
        ))
}

/// File first, then flags, then the thread fallback.
fn resolve_config(m: &ArgMatches, threads_env: Option<&str>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<PathBuf>("config") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cfg.apply_file(&text, path)?;
    }
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)
                .map_err(|e| CliError::Usage(format!("--{}: {e}", key.replace('_', "-"))))?;
        }
    }
    cfg.apply_thread_fallback(threads_env)?;
    cfg.validate()?;
    Ok(cfg)
}

fn path(m: &ArgMatches, name: &str) -> PathBuf {
    m.get_one::<PathBuf>(name).expect("required by clap").clone()
}

fn dispatch(m: &ArgMatches, threads_env: Option<&str>) -> Result<(), CliError> {
    match m.subcommand() {
        Some(("synth", s)) => commands::synth(s.get_one::<PathBuf>("spec").map(PathBuf::as_path), &path(s, "out")),
        Some(("register", s)) => {
            let cfg = resolve_config(s, threads_env)?;
            let summary = commands::register(&path(s, "in"), &path(s, "out"), &cfg)?;
            println!("{summary}");
            Ok(())
        }
        Some(("evaluate", s)) => {
            let cfg = resolve_config(s, threads_env)?;
            let est: Vec<PathBuf> = s.get_many::<PathBuf>("est").expect("required").cloned().collect();
            for line in commands::evaluate(&path(s, "in"), &path(s, "truth"), &est, &path(s, "out"), &cfg)? {
                println!("{line}");
            }
            Ok(())
        }
        Some(("spectrum", s)) => {
            let cfg = resolve_config(s, threads_env)?;
            commands::spectrum(&path(s, "in"), &path(s, "out"), &cfg)
        }
        _ => unreachable!("subcommand_required"),
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let threads_env = std::env::var(THREADS_ENV).ok();
    match dispatch(&matches, threads_env.as_deref()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
