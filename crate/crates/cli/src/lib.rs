//! Command-line runner: `bwsl <synth|train|backtest|interpret|metrics>`.
//!
//! Every run writes `manifest.txt` into its output directory. Passing that
//! file back with `--config` repeats the run.

mod commands;
pub mod config;
pub mod error;
pub mod svg;

use std::ffi::OsString;
use std::path::Path;

use clap::error::ErrorKind;
use clap::{Arg, ArgMatches};

pub use commands::{read_returns, MANIFEST};
pub use config::{Command, RunConfig};
pub use error::CliError;

fn cli() -> clap::Command {
    let registry = config::registry();
    let mut app = clap::Command::new("bwsl")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Train, backtest and interpret long/short stock selection policies")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for c in Command::ALL {
        let mut sub = clap::Command::new(c.name()).about(c.about()).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value file (a previous run's manifest works); flags override it"),
        );
        for &k in c.keys() {
            let ks = registry.iter().find(|s| s.name == k).expect("registered key");
            let default = if ks.default.is_empty() { "required".to_string() } else { ks.default.clone() };
            sub = sub.arg(
                Arg::new(k)
                    .long(k.replace('_', "-"))
                    .value_name("VALUE")
                    .help(format!("{} [default: {default}]", ks.help)),
            );
        }
        app = app.subcommand(sub);
    }
    app
}

fn resolve(command: Command, matches: &ArgMatches) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::defaults(command);
    if let Some(path) = matches.get_one::<String>("config") {
        cfg.apply_file(Path::new(path))?;
    }
    for &k in command.keys() {
        if let Some(v) = matches.get_one::<String>(k) {
            cfg.set(k, v)?;
        }
    }
    cfg.verify_inputs()?;
    Ok(cfg)
}

fn try_run(args: Vec<OsString>) -> Result<(), CliError> {
    let matches = match cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            eprint!("{e}");
            return Err(CliError::usage("missing subcommand"));
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return Err(CliError::usage(first.to_string()));
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let command: Command = name.parse()?;
    let cfg = resolve(command, sub)?;
    commands::execute(&cfg)
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    match try_run(args.into_iter().map(Into::into).collect()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.reason_line());
            e.code()
        }
    }
}
