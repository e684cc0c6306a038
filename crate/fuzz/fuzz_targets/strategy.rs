#![no_main]

use libfuzzer_sys::fuzz_target;
use racestrat::model::Strategy;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = text.parse::<Strategy>() {
        let printed = s.to_string();
        assert_eq!(printed.parse::<Strategy>().expect("printed strategies parse"), s);
    }
});
