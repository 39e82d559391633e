#![no_main]

use libfuzzer_sys::fuzz_target;
use randprune_cli::compare::{compare_summaries, parse_summary};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(summary) = parse_summary(text) {
            let _ = compare_summaries(&summary, &summary);
        }
    }
});
