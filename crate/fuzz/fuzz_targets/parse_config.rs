#![no_main]
use kws_cli::config::{Command, RunConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    for cmd in Command::ALL {
        if let Ok(cfg) = RunConfig::build(cmd, Some((text, "fuzz")), &[]) {
            assert_eq!(RunConfig::build(cmd, Some((&cfg.echo(), "echo")), &[]).unwrap(), cfg);
        }
    }
});
