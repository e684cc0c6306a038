#![no_main]

use libfuzzer_sys::fuzz_target;
use racestrat::RaceConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RaceConfig::from_json(text) {
        let again = RaceConfig::from_json(&cfg.to_json_pretty()).expect("a parsed config serializes to a valid one");
        assert_eq!(again.digest(), cfg.digest());
    }
});
