#![no_main]

use clap::Parser;
use libfuzzer_sys::fuzz_target;
use pbs_cli::config::validate;
use pbs_cli::options::Cli;

// Arguments are the NUL-separated pieces of the input; parsing and validation
// only, no computation.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let args = std::iter::once("pbs").chain(text.split('\0'));
    if let Ok(cli) = Cli::try_parse_from(args) {
        let (command, options) = cli.command.split();
        let _ = validate(command, options);
    }
});
