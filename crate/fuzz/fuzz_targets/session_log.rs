#![no_main]

use libfuzzer_sys::fuzz_target;
use racestrat::env::ScenarioSpec;
use racestrat::RaceConfig;
use racestrat_service::{Mode, Session};

// Restoring a session from an arbitrary log either fails or yields a session
// whose log replays to the same state.
fuzz_target!(|data: &[u8]| {
    let dir = tempfile::tempdir().unwrap();
    let s = Session::create(dir.path(), ScenarioSpec::nominal(RaceConfig::with_laps(6)), Mode::Manual).unwrap();
    let log = s.log_path();
    let sdir = log.parent().unwrap().to_path_buf();
    drop(s);
    std::fs::write(&log, data).unwrap();
    if let Ok(restored) = Session::restore(&sdir) {
        let state = *restored.env.state();
        drop(restored);
        let again = Session::restore(&sdir).expect("a truncated log restores");
        assert_eq!(*again.env.state(), state);
    }
});
