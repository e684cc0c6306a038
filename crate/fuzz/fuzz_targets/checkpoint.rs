#![no_main]

use libfuzzer_sys::fuzz_target;
use racestrat::agent::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ck) = Checkpoint::from_json(text) {
        if let Ok(params) = ck.to_params() {
            assert!(params.is_finite());
        }
    }
});
