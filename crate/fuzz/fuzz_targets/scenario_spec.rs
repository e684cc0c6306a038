#![no_main]

use libfuzzer_sys::fuzz_target;
use racestrat::env::{AgentAction, RaceEnv, ScenarioSpec};
use racestrat::PitAction;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = ScenarioSpec::from_json(text) else { return };
    if spec.cfg.n_laps > 200 {
        return;
    }
    let mut env = RaceEnv::new(spec).expect("a validated spec builds an environment");
    while !env.is_done() {
        env.step(&AgentAction::new(0.5, 0.0, PitAction::STAY)).expect("nominal actions are always accepted");
    }
    let end = env.state();
    assert!(end.e_b.abs() <= 1e-9 && end.e_f.abs() <= 1e-9);
});
