#![no_main]

use eopt::training::LossLog;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(log) = LossLog::parse_csv(text) {
            let again = LossLog::parse_csv(&log.to_csv()).expect("rendered log parses");
            assert_eq!(again.rows.len(), log.rows.len());
        }
    }
});
