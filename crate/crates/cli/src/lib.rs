//! Command-line front end of `pbs-core`.

pub mod commands;
pub mod config;
pub mod options;
pub mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::Path;

use clap::error::ErrorKind;
use clap::Parser;
use pbs_core::PbsError;

use crate::options::{parse_config, Cli, Format};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

/// Caps the global rayon pool from `PBS_THREADS`, if set.
fn configure_threads(value: Option<String>) -> Result<(), String> {
    let Some(value) = value else { return Ok(()) };
    let n: usize = match value.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => return Err(format!("PBS_THREADS must be a positive integer, got `{value}`")),
    };
    // a pool built earlier in the process (tests) is left in place
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs the command line `args` (program name first) and returns the exit status.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let rendered = e.render().to_string();
                    let line = rendered
                        .lines()
                        .find(|l| !l.trim().is_empty())
                        .unwrap_or("invalid arguments");
                    let _ = writeln!(stderr, "{line}");
                    EXIT_VALIDATION
                }
            };
        }
    };
    let (command, mut options) = cli.command.split();
    if let Some(path) = options.config.clone() {
        let parsed = std::fs::read_to_string(&path)
            .map_err(|e| format!("cannot read config {path}: {e}"))
            .and_then(|t| parse_config(&t));
        match parsed {
            Ok((file_command, file_options)) => {
                if let Some(c) = file_command.filter(|c| *c != command) {
                    let _ = writeln!(
                        stderr,
                        "error: config is for `{}`, not `{}`",
                        c.as_str(),
                        command.as_str()
                    );
                    return EXIT_VALIDATION;
                }
                options = options.over(file_options);
            }
            Err(msg) => {
                let _ = writeln!(stderr, "error: {msg}");
                return EXIT_VALIDATION;
            }
        }
    }
    if let Err(msg) = configure_threads(std::env::var("PBS_THREADS").ok()) {
        let _ = writeln!(stderr, "error: {msg}");
        return EXIT_VALIDATION;
    }
    let cfg = match config::validate(command, options) {
        Ok(cfg) => cfg,
        Err(problems) => {
            for p in problems {
                let _ = writeln!(stderr, "error: {p}");
            }
            return EXIT_VALIDATION;
        }
    };
    let report = match commands::execute(&cfg.job) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return match e {
                PbsError::Argument(_) => EXIT_VALIDATION,
                _ => EXIT_NUMERIC,
            };
        }
    };
    let text = match cfg.format {
        Format::Csv => report.table.to_csv(),
        Format::Json => {
            let mut echo = serde_json::Map::new();
            echo.insert("command".into(), cfg.command.as_str().into());
            if let serde_json::Value::Object(flags) = serde_json::to_value(&cfg.echo).expect("options serialize") {
                echo.extend(flags);
            }
            output::json_document(serde_json::Value::Object(echo), report.json)
        }
    };
    let written = match &cfg.output {
        Some(path) => output::write_atomic(Path::new(path), &text),
        None => stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()),
    };
    if let Err(e) = written {
        let _ = writeln!(stderr, "error: cannot write output: {e}");
        return EXIT_IO;
    }
    if report.failed_checks > 0 {
        let _ = writeln!(stderr, "{} verification checks failed", report.failed_checks);
        return EXIT_VERIFY;
    }
    EXIT_OK
}
