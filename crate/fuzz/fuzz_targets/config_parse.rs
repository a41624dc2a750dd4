#![no_main]

use libfuzzer_sys::fuzz_target;
use ttrec_harness::{ConfigFile, RunConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(file) = ConfigFile::parse(text) {
        if let Ok(cfg) = RunConfig::from_file(&file) {
            cfg.validate().expect("parsed configs are valid");
        }
    }
});
