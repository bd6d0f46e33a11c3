//! `saescope` command-line tool.
//!
//! Every command takes its parameters as `--key value` flags and/or a
//! `--config` file of `key=value` lines; flags win over the file, the file
//! over built-in defaults. The resolved parameters are written to
//! `<out>/<command>.config` before the command runs.
//!
//! Exit status: 0 on success, 1 when the pipeline fails, 2 on usage errors.
//! Failures print a single `error: <module>: <message>` line to stderr.

mod commands;
mod config;
mod report;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;

use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{command, parse_config_text, Resolved, COMMANDS};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Pipeline { module: &'static str, message: String },
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Pipeline { .. } => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = |s: &str| s.replace('\n', " ");
        match self {
            CliError::Usage(m) => write!(f, "error: usage: {}", one_line(m)),
            CliError::Pipeline { module, message } => write!(f, "error: {module}: {}", one_line(message)),
        }
    }
}

/// Attaches a module name to library and I/O errors.
pub trait InModule<T> {
    fn in_module(self, module: &'static str) -> Result<T, CliError>;
}

impl<T, E: fmt::Display> InModule<T> for Result<T, E> {
    fn in_module(self, module: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Pipeline {
            module,
            message: e.to_string(),
        })
    }
}

fn cli() -> Command {
    let mut app = Command::new("saescope")
        .about("Train, evaluate and steer sparse autoencoders over model activations")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for spec in COMMANDS {
        let mut sub = Command::new(spec.name).about(spec.about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value parameter file"),
        );
        if let Some(key) = spec.positional {
            sub = sub.arg(Arg::new("positional").value_name("PATH").help(format!("same as --{key}")));
        }
        for p in spec.params {
            let help = match p.default {
                Some(d) if !d.is_empty() => format!("{} [default: {d}]", p.help),
                _ => p.help.to_string(),
            };
            sub = sub.arg(
                Arg::new(p.key)
                    .long(p.key)
                    .value_name("VALUE")
                    .action(ArgAction::Set)
                    .help(help),
            );
        }
        app = app.subcommand(sub);
    }
    app
}

fn resolve(name: &str, m: &ArgMatches) -> Result<Resolved, CliError> {
    let spec = command(name);
    let file = match m.get_one::<String>("config") {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read config {path}: {e}")))?;
            parse_config_text(&text, spec)?
        }
        None => BTreeMap::new(),
    };
    let mut flags = BTreeMap::new();
    if let Some(key) = spec.positional {
        if let Some(v) = m.get_one::<String>("positional") {
            flags.insert(key.to_string(), v.clone());
        }
    }
    for p in spec.params {
        if let Some(v) = m.get_one::<String>(p.key) {
            flags.insert(p.key.to_string(), v.clone());
        }
    }
    Ok(Resolved::new(spec, file, flags))
}

fn run(args: impl IntoIterator<Item = OsString>) -> Result<(), CliError> {
    let matches = match cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            // help and version requests
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::usage(first.trim_start_matches("error: ")));
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let resolved = resolve(name, sub)?;
    let spec = command(name);
    if spec.params.iter().any(|p| p.key == "out") {
        let out = resolved.out_dir()?;
        std::fs::create_dir_all(&out).in_module("cli")?;
        resolved.write_snapshot(&out).in_module("cli")?;
    }
    commands::dispatch(name, spec.module, &resolved)
}

fn main() {
    if let Err(e) = run(std::env::args_os()) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
