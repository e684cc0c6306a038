//! Finite-horizon decision process around the lap simulator: observation
//! construction, normalized action mapping, reachability overwrites, the
//! compound rule and scripted tire-wear disturbances.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compound::{Compound, PitAction};
use crate::config::RaceConfig;
use crate::error::{ConfigError, EnvError};
use crate::laptime::{lap_kind, LapKind};
use crate::model::{step, ControlInput, EpisodeLog, LapRecord, RaceState, StepMode};

pub const OBS_DIM: usize = 10;

/// Reward offset: reward is `T_LAP_CONST - t_lap`.
pub const T_LAP_CONST: f64 = 100.0;

pub const DEFAULT_DISTURBANCE_LAP: usize = 22;
pub const DEFAULT_TW_DELTA: f64 = 0.3;

/// Laps before the flag from which the compound rule may intervene.
pub const COMPOUND_RULE_WINDOW: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub lap: usize,
    pub tw_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub cfg: RaceConfig,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn nominal(cfg: RaceConfig) -> Self {
        ScenarioSpec { cfg, disturbances: Vec::new(), seed: 0 }
    }

    /// Nominal scenario plus the default wear jump on lap 22.
    pub fn disturbed(cfg: RaceConfig) -> Self {
        ScenarioSpec::nominal(cfg).with_disturbance(DEFAULT_DISTURBANCE_LAP, DEFAULT_TW_DELTA)
    }

    pub fn with_disturbance(mut self, lap: usize, tw_delta: f64) -> Self {
        self.disturbances.push(Disturbance { lap, tw_delta });
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.cfg.validate()?;
        for d in &self.disturbances {
            if d.lap >= self.cfg.n_laps {
                return Err(ConfigError::Invalid {
                    field: "disturbances".into(),
                    reason: format!("lap {} is outside the race (n_laps = {})", d.lap, self.cfg.n_laps),
                });
            }
            if !d.tw_delta.is_finite() {
                return Err(ConfigError::Invalid { field: "disturbances".into(), reason: "tw_delta must be finite".into() });
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let spec: ScenarioSpec = serde_json::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Wear jump applied after the wear update of lap `k`.
    pub fn tw_delta_at(&self, k: usize) -> f64 {
        self.disturbances.iter().filter(|d| d.lap == k).map(|d| d.tw_delta).sum()
    }
}

/// Normalized observation. Components, in order: battery energy, fuel energy,
/// fuel mass, race time, compound-change flag, compound, tire wear, outlap
/// flag, previous lap time, laps remaining.
///
/// Fuel energy is given as its position in the window that keeps the
/// remaining laps feasible: 0 means every remaining lap must burn the
/// minimum, 1 the maximum, 0.5 the nominal rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub const NAMES: [&'static str; OBS_DIM] =
        ["e_b", "e_f", "m_fuel", "t_race", "b_compound", "tc", "tw", "b_outlap", "t_lap_prev", "laps_remaining"];

    pub fn new(state: &RaceState, k: usize, t_lap_prev: f64, cfg: &RaceConfig) -> Self {
        let n = cfg.n_laps as f64;
        let left = (cfg.n_laps - k.min(cfg.n_laps)) as f64;
        let fuel = if left > 0.0 { (state.e_f - left * cfg.de_f_min()) / (left * (cfg.de_f_max() - cfg.de_f_min())) } else { 0.5 };
        Observation([
            state.e_b / cfg.e_b_max,
            fuel,
            (state.m_car - cfg.m_empty) / cfg.m_f_race,
            state.t_race / (n * T_LAP_CONST),
            state.b_compound.min(1) as f64,
            state.tc.code() as f64 - 2.0,
            state.tw,
            if state.b_outlap { 1.0 } else { 0.0 },
            t_lap_prev / T_LAP_CONST,
            left / n,
        ])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn laps_remaining(&self, cfg: &RaceConfig) -> usize {
        (self.0[9] * cfg.n_laps as f64).round() as usize
    }
}

/// Raw agent output. `f` selects the fuel burn in `[0, 1]`, `b` the battery
/// use in `[-1, 1]` with `+1` the maximum deployment, `ps` the pit code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    pub f: f64,
    pub b: f64,
    pub ps: PitAction,
}

impl AgentAction {
    pub fn new(f: f64, b: f64, ps: PitAction) -> Self {
        AgentAction { f, b, ps }
    }

    /// Uniform over a box slightly larger than the valid one, so clipping is
    /// exercised too.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let ps = if rng.random_bool(0.9) { 0 } else { rng.random_range(1..=3) };
        AgentAction {
            f: rng.random_range(-0.2..1.2),
            b: rng.random_range(-1.2..1.2),
            ps: PitAction::new(ps).expect("code in range"),
        }
    }
}

/// Clips the normalized heads and maps them to physical energies
/// `(de_f, de_b)`. The battery map is decreasing.
pub fn map_actions(f: f64, b: f64, cfg: &RaceConfig) -> (f64, f64) {
    let f = if f.is_nan() { 0.5 } else { f.clamp(0.0, 1.0) };
    let b = if b.is_nan() { 0.0 } else { b.clamp(-1.0, 1.0) };
    let de_f = cfg.de_f_min() + f * (cfg.de_f_max() - cfg.de_f_min());
    let de_b = cfg.de_b_max + (b + 1.0) / 2.0 * (cfg.de_b_min - cfg.de_b_max);
    (de_f, de_b)
}

/// Laps left after lap `k`.
fn remaining_after(k: usize, cfg: &RaceConfig) -> f64 {
    cfg.n_laps.saturating_sub(k + 1) as f64
}

/// Keeps the battery inside its bounds and able to empty by the flag. Returns
/// the battery change and the case that decided it (0 when untouched, 1 upper
/// bound, 2 lower bound, 3 reachability).
pub fn overwrite_battery(e_b: f64, de_b: f64, k: usize, cfg: &RaceConfig) -> (f64, u8) {
    let reach = -cfg.de_b_min * remaining_after(k, cfg);
    let mut out = (de_b, 0);
    if e_b + out.0 > cfg.e_b_max {
        out = (cfg.e_b_max - e_b, 1);
    }
    if e_b + out.0 < 0.0 {
        out = (-e_b, 2);
    }
    if e_b + out.0 > reach {
        out = (reach - e_b, 3);
    }
    out
}

/// Fuel overwrite against explicit per-lap burn limits and `r` laps left
/// after the current one.
pub fn overwrite_fuel_with(e_f: f64, de_f: f64, r: f64, de_f_min: f64, de_f_max: f64) -> (f64, u8) {
    if e_f - de_f > de_f_max * r {
        (e_f - de_f_max * r, 1)
    } else if e_f - de_f < de_f_min * r {
        (e_f - de_f_min * r, 2)
    } else {
        (de_f, 0)
    }
}

/// Keeps the remaining fuel burnable within the per-lap band. Returns the
/// burn and the case (0 untouched, 1 too much fuel left, 2 too little).
pub fn overwrite_fuel(e_f: f64, de_f: f64, k: usize, cfg: &RaceConfig) -> (f64, u8) {
    overwrite_fuel_with(e_f, de_f, remaining_after(k, cfg), cfg.de_f_min(), cfg.de_f_max())
}

/// Last lap of the race on which a stop is allowed.
pub fn last_pit_lap(cfg: &RaceConfig) -> Option<usize> {
    (0..cfg.n_laps).rev().find(|&k| !cfg.is_forbidden_lap(k))
}

/// Forces a compound change on the last lap a stop is possible if none has
/// happened yet. Returns the pit action and whether it was forced.
pub fn enforce_compound_rule(b_compound: u32, tc: Compound, ps: PitAction, k: usize, cfg: &RaceConfig) -> (PitAction, bool) {
    if b_compound > 0 || k + COMPOUND_RULE_WINDOW < cfg.n_laps || last_pit_lap(cfg) != Some(k) {
        return (ps, false);
    }
    if ps.target().is_some_and(|c| c != tc) {
        return (ps, false);
    }
    let forced = if tc == Compound::Soft { Compound::Medium } else { Compound::Soft };
    (PitAction::pit_for(forced), true)
}

/// What the environment did to the submitted action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub k: usize,
    /// Inputs actually integrated.
    pub applied: ControlInput,
    /// 0 untouched, 1 upper bound, 2 lower bound, 3 reachability.
    pub battery_case: u8,
    /// 0 untouched, 1 too much fuel left, 2 too little.
    pub fuel_case: u8,
    pub forced: bool,
    /// A stop was requested on a forbidden lap and dropped.
    pub masked: bool,
    pub kind: LapKind,
    pub t_lap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Everything the transition depends on besides the static spec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub k: usize,
    pub state: RaceState,
    pub t_lap_prev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvLapRow {
    pub k: usize,
    pub e_b: f64,
    pub e_f: f64,
    pub m_car: f64,
    pub tw: f64,
    pub tc: Compound,
    pub ps: u8,
    pub de_b: f64,
    pub de_f: f64,
    pub t_lap: f64,
    pub t_race: f64,
    pub battery_case: u8,
    pub fuel_case: u8,
    pub forced: bool,
    pub masked: bool,
}

#[derive(Debug, Clone)]
pub struct RaceEnv {
    spec: ScenarioSpec,
    snap: EnvSnapshot,
    done: bool,
    laps: Vec<LapRecord>,
    infos: Vec<StepInfo>,
}

/// Validates `spec` and returns a fresh environment with its first observation.
pub fn reset(spec: ScenarioSpec) -> Result<(RaceEnv, Observation), EnvError> {
    let env = RaceEnv::new(spec)?;
    let obs = env.observation();
    Ok((env, obs))
}

impl RaceEnv {
    pub fn new(spec: ScenarioSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        let state = RaceState::initial(&spec.cfg);
        Ok(RaceEnv { spec, snap: EnvSnapshot { k: 0, state, t_lap_prev: 0.0 }, done: false, laps: Vec::new(), infos: Vec::new() })
    }

    /// Environment continuing from a snapshot, with an empty log.
    pub fn from_snapshot(spec: ScenarioSpec, snap: EnvSnapshot) -> Result<Self, EnvError> {
        spec.validate()?;
        snap.state.check_bounds(&spec.cfg)?;
        let done = snap.k >= spec.cfg.n_laps;
        Ok(RaceEnv { spec, snap, done, laps: Vec::new(), infos: Vec::new() })
    }

    pub fn reset(&mut self) -> Observation {
        self.snap = EnvSnapshot { k: 0, state: RaceState::initial(&self.spec.cfg), t_lap_prev: 0.0 };
        self.done = false;
        self.laps.clear();
        self.infos.clear();
        self.observation()
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn cfg(&self) -> &RaceConfig {
        &self.spec.cfg
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        self.snap
    }

    pub fn state(&self) -> &RaceState {
        &self.snap.state
    }

    pub fn lap(&self) -> usize {
        self.snap.k
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observation(&self) -> Observation {
        Observation::new(&self.snap.state, self.snap.k, self.snap.t_lap_prev, &self.spec.cfg)
    }

    pub fn infos(&self) -> &[StepInfo] {
        &self.infos
    }

    /// Applies a wear jump to the current state right away.
    pub fn inject_disturbance(&mut self, tw_delta: f64) {
        let tw = &mut self.snap.state.tw;
        *tw = (*tw + tw_delta).clamp(0.0, 1.0);
    }

    pub fn step(&mut self, action: &AgentAction) -> Result<StepResult, EnvError> {
        let (de_f, de_b) = map_actions(action.f, action.b, &self.spec.cfg);
        self.step_input(&ControlInput::new(de_b, de_f, action.ps))
    }

    /// Same as [`RaceEnv::step`] for a physical input, which still goes
    /// through the overwrites, the pit mask and the compound rule.
    pub fn step_input(&mut self, input: &ControlInput) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::SteppedAfterDone);
        }
        let cfg = &self.spec.cfg;
        let EnvSnapshot { k, state, .. } = self.snap;
        let (de_b, battery_case) = overwrite_battery(state.e_b, input.de_b, k, cfg);
        let (de_f, fuel_case) = overwrite_fuel(state.e_f, input.de_f, k, cfg);
        let masked = input.ps.is_stop() && cfg.is_forbidden_lap(k);
        let ps = if masked { PitAction::STAY } else { input.ps };
        let (ps, forced) = enforce_compound_rule(state.b_compound, state.tc, ps, k, cfg);
        let applied = ControlInput { de_b, de_f, ps, overwrite: battery_case > 0 || fuel_case > 0 };
        let (mut next, t_lap) = step(&state, &applied, cfg, StepMode::Strict)?;
        let jump = self.spec.tw_delta_at(k);
        if jump != 0.0 {
            next.tw = (next.tw + jump).clamp(0.0, 1.0);
        }
        let kind = lap_kind(ps, state.b_outlap);
        let info = StepInfo { k, applied, battery_case, fuel_case, forced, masked, kind, t_lap };
        self.laps.push(LapRecord { k, state, input: applied, kind, t_lap });
        self.infos.push(info);
        self.snap = EnvSnapshot { k: k + 1, state: next, t_lap_prev: t_lap };
        self.done = k + 1 >= cfg.n_laps;
        Ok(StepResult { obs: self.observation(), reward: T_LAP_CONST - t_lap, done: self.done, info })
    }

    /// Log of the laps stepped since the last reset.
    pub fn episode_log(&self) -> EpisodeLog {
        let s = self.snap.state;
        EpisodeLog {
            start_lap: self.laps.first().map_or(self.snap.k, |l| l.k),
            laps: self.laps.clone(),
            final_state: s,
            t_race: s.t_race,
            legal: s.b_compound >= 1,
        }
    }

    pub fn rows(&self) -> Vec<EnvLapRow> {
        let log = self.episode_log();
        log.rows()
            .into_iter()
            .zip(&self.infos)
            .map(|(r, i)| EnvLapRow {
                k: r.k,
                e_b: r.e_b,
                e_f: r.e_f,
                m_car: r.m_car,
                tw: r.tw,
                tc: r.tc,
                ps: r.ps,
                de_b: r.de_b,
                de_f: r.de_f,
                t_lap: r.t_lap,
                t_race: r.t_race,
                battery_case: i.battery_case,
                fuel_case: i.fuel_case,
                forced: i.forced,
                masked: i.masked,
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        for row in self.rows() {
            wr.serialize(row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// One lap record with its step info per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (lap, info) in self.laps.iter().zip(&self.infos) {
            serde_json::to_writer(&mut w, &serde_json::json!({ "lap": lap, "info": info }))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs a whole episode with `policy` and returns the environment afterwards.
pub fn rollout<F>(spec: ScenarioSpec, mut policy: F) -> Result<RaceEnv, EnvError>
where
    F: FnMut(&Observation, &RaceEnv) -> AgentAction,
{
    let (mut env, mut obs) = reset(spec)?;
    while !env.is_done() {
        let a = policy(&obs, &env);
        obs = env.step(&a)?.obs;
    }
    Ok(env)
}
