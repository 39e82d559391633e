#![no_main]

use libfuzzer_sys::fuzz_target;
use randprune_cli::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::parse(text) {
            // validation must not panic either, and a valid config must
            // yield a driver config the driver accepts
            if cfg.validate().is_ok() {
                for &seed in &cfg.run.seeds {
                    assert!(cfg.prune_run_config(seed).validate().is_ok());
                }
            }
        }
    }
});
