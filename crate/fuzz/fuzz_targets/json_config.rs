#![no_main]

use libfuzzer_sys::fuzz_target;
use pbs_cli::config::validate;
use pbs_cli::options::{parse_config, Command};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((command, options)) = parse_config(text) {
        let _ = validate(command.unwrap_or(Command::Quote), options);
    }
});
