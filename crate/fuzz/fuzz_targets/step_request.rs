#![no_main]

use libfuzzer_sys::fuzz_target;
use racestrat_service::step_request;

fuzz_target!(|data: &[u8]| {
    if let Ok(Some(a)) = step_request(data) {
        assert!((0.0..=1.0).contains(&a.f) && (-1.0..=1.0).contains(&a.b));
    }
});
