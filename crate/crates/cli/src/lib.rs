//! Command-line front end for the CSP attention lab.
//!
//! Every subcommand takes `--config <file>` plus one `--<key> <value>` flag
//! per schema key; see [`config`] for the keys and their defaults.

pub mod bench;
pub mod config;
pub mod error;
pub mod output;
pub mod suites;

use std::ffi::OsString;
use std::io::Write;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches};

use config::{load_config_file, Command, Key, Kind, RunConfig, COMMON};
use error::CliError;
use output::{render, write_atomic, Provenance};

fn key_arg(key: &Key) -> Arg {
    let arg = Arg::new(key.name)
        .long(key.name)
        .value_name("VALUE")
        .help(key.help)
        .action(ArgAction::Set);
    match key.kind {
        Kind::Bool => arg.num_args(0..=1).default_missing_value("true"),
        Kind::Choice(options) => arg.value_parser(clap::builder::PossibleValuesParser::new(options)),
        _ => arg,
    }
}

pub fn cli() -> clap::Command {
    let mut root = clap::Command::new("csp")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Channel-wise sample permutation attention lab")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for cmd in Command::ALL {
        let mut sub = clap::Command::new(cmd.name()).about(cmd.about()).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("flat `key = value` file; flags override it"),
        );
        for key in COMMON.iter().chain(cmd.keys()) {
            sub = sub.arg(key_arg(key));
        }
        root = root.subcommand(sub);
    }
    root
}

fn resolve(command: Command, m: &ArgMatches) -> Result<RunConfig, CliError> {
    let file = match m.get_one::<String>("config") {
        Some(path) => Some(load_config_file(command, Path::new(path))?),
        None => None,
    };
    let overrides: Vec<(String, String)> = COMMON
        .iter()
        .chain(command.keys())
        .filter(|k| m.value_source(k.name) == Some(ValueSource::CommandLine))
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect();
    RunConfig::resolve(command, file, &overrides)
}

fn execute(command: Command, m: &ArgMatches, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = resolve(command, m)?;
    let report = suites::run_suite(&cfg)?;
    let text = render(&report.table, &Provenance::of(&cfg), cfg.format());
    match cfg.out() {
        Some(path) => write_atomic(&path, &text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    for line in &report.summary {
        writeln!(stderr, "{line}")?;
    }
    if report.failures.is_empty() {
        Ok(0)
    } else {
        writeln!(stderr, "{}", report.failure_record(&cfg))?;
        Ok(1)
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code:
/// 0 on success, 1 on an invariant failure or runtime error, 2 on a usage
/// error.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(rendered.as_bytes());
                    0
                }
                _ => {
                    let _ = stderr.write_all(rendered.as_bytes());
                    2
                }
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let command = Command::parse(name).expect("registered subcommand");
    match execute(command, sub, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
