//! Lap-by-lap race dynamics.

mod episode;
mod strategy;

pub use episode::{simulate_from, simulate_strategy, EpisodeLog, LapRecord, LapRow};
pub use strategy::{strategy_of, Stop, Strategy, StrategyParseError};

use serde::{Deserialize, Serialize};

use crate::compound::{Compound, PitAction};
use crate::config::{RaceConfig, TireParams, WearCoefficients};
use crate::error::ModelError;
use crate::laptime::{lap_kind, nominal_lap_time, tire_correction, LapKind, MapPoint};

/// Absolute slack (MJ) accepted on state and input bounds in strict mode.
pub const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaceState {
    pub e_b: f64,
    pub e_f: f64,
    pub m_car: f64,
    pub t_race: f64,
    pub b_compound: u32,
    pub tc: Compound,
    pub tw: f64,
    pub ta: u32,
    pub b_outlap: bool,
}

impl RaceState {
    /// State at the green flag: full battery, full tank, fresh tires.
    pub fn initial(cfg: &RaceConfig) -> Self {
        RaceState {
            e_b: cfg.e_b_max,
            e_f: cfg.e_f_init(),
            m_car: cfg.m_car_init(),
            t_race: 0.0,
            b_compound: 0,
            tc: cfg.tc_init,
            tw: 0.0,
            ta: 0,
            b_outlap: false,
        }
    }

    pub fn check_bounds(&self, cfg: &RaceConfig) -> Result<(), ModelError> {
        check("e_b", self.e_b, 0.0, cfg.e_b_max)?;
        check("e_f", self.e_f, 0.0, f64::INFINITY)?;
        check("m_car", self.m_car, cfg.m_empty, cfg.m_car_init())?;
        check("tw", self.tw, 0.0, 1.0)?;
        if !(self.t_race >= 0.0) {
            return Err(ModelError::BoundViolation { quantity: "t_race", value: self.t_race, lo: 0.0, hi: f64::INFINITY });
        }
        Ok(())
    }
}

fn check(quantity: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), ModelError> {
    let slack = BOUND_TOL * (1.0 + lo.abs().max(if hi.is_finite() { hi.abs() } else { 0.0 }));
    if value.is_finite() && value >= lo - slack && value <= hi + slack {
        Ok(())
    } else {
        Err(ModelError::BoundViolation { quantity, value, lo, hi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub de_b: f64,
    pub de_f: f64,
    pub ps: PitAction,
    /// Set when the input was produced by an environment overwrite and may
    /// leave the nominal input box.
    #[serde(default)]
    pub overwrite: bool,
}

impl ControlInput {
    pub fn new(de_b: f64, de_f: f64, ps: PitAction) -> Self {
        ControlInput { de_b, de_f, ps, overwrite: false }
    }

    /// Charge-sustaining lap at the nominal fuel burn.
    pub fn nominal(cfg: &RaceConfig, ps: PitAction) -> Self {
        ControlInput::new(0.0, cfg.de_f_nom(), ps)
    }

    pub fn check_box(&self, cfg: &RaceConfig) -> Result<(), ModelError> {
        check("de_b", self.de_b, cfg.de_b_min, cfg.de_b_max)?;
        check("de_f", self.de_f, cfg.de_f_min(), cfg.de_f_max())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    /// Inputs outside their box or states outside their bounds are errors.
    Strict,
    /// Inputs are clamped so the next state stays within its bounds.
    Clamping,
}

/// Energy, mass and race-time update.
pub fn step_physical(
    state: &RaceState,
    input: &ControlInput,
    lap_time: f64,
    cfg: &RaceConfig,
    mode: StepMode,
) -> Result<RaceState, ModelError> {
    let input = match mode {
        StepMode::Strict => {
            if !input.overwrite {
                input.check_box(cfg)?;
            }
            *input
        }
        StepMode::Clamping => clamp_input(state, input, cfg),
    };
    let next = RaceState {
        e_b: state.e_b + input.de_b,
        e_f: state.e_f - input.de_f,
        m_car: state.m_car - input.de_f / cfg.h_lhv,
        t_race: state.t_race + lap_time,
        ..*state
    };
    if mode == StepMode::Strict {
        check("e_b", next.e_b, 0.0, cfg.e_b_max)?;
        check("e_f", next.e_f, 0.0, f64::INFINITY)?;
    }
    Ok(next)
}

/// Restricts an input so the battery stays in `[0, e_b_max]` and the tank
/// does not run dry. Clamped inputs are marked as overwrites.
pub fn clamp_input(state: &RaceState, input: &ControlInput, cfg: &RaceConfig) -> ControlInput {
    let de_b = input.de_b.clamp(-state.e_b, cfg.e_b_max - state.e_b);
    let de_f = input.de_f.clamp(0.0, state.e_f.max(0.0));
    let changed = de_b != input.de_b || de_f != input.de_f;
    ControlInput { de_b, de_f, ps: input.ps, overwrite: input.overwrite || changed }
}

pub fn update_compound(tc: Compound, ps: PitAction) -> Compound {
    ps.target().unwrap_or(tc)
}

pub fn update_b_compound(b: u32, tc: Compound, ps: PitAction) -> u32 {
    match ps.target() {
        Some(next) if next != tc => b + 1,
        _ => b,
    }
}

pub fn update_tire_age(ta: u32, ps: PitAction) -> u32 {
    if ps.is_stop() {
        0
    } else {
        ta + 1
    }
}

/// Unclamped wear recursion for one compound.
pub fn wear_recursion(tw: f64, mass_ratio: f64, w: &WearCoefficients) -> f64 {
    w.a * tw + w.b * mass_ratio + w.c
}

pub fn update_tire_wear(tw: f64, m_car: f64, m_car0: f64, tc: Compound, ps: PitAction, tires: &TireParams) -> f64 {
    if ps.is_stop() {
        return 0.0;
    }
    wear_recursion(tw, m_car / m_car0, &tires.get(tc).wear).min(1.0)
}

/// Lap time and lap kind for `input` applied in `state`.
pub fn lap_time(state: &RaceState, input: &ControlInput, cfg: &RaceConfig) -> (f64, LapKind) {
    let kind = lap_kind(input.ps, state.b_outlap);
    let pt = MapPoint { e_b: state.e_b, de_b: input.de_b, de_f: input.de_f, m_car: state.m_car };
    let t = nominal_lap_time(&pt, kind, &cfg.laptime, cfg) + tire_correction(state.tw, state.tc, &cfg.tires);
    (t, kind)
}

/// Full one-lap transition. In clamping mode the input is clamped before the
/// lap time is evaluated.
pub fn step(state: &RaceState, input: &ControlInput, cfg: &RaceConfig, mode: StepMode) -> Result<(RaceState, f64), ModelError> {
    let input = match mode {
        StepMode::Strict => *input,
        StepMode::Clamping => clamp_input(state, input, cfg),
    };
    let (t_lap, _) = lap_time(state, &input, cfg);
    let mut next = step_physical(state, &input, t_lap, cfg, mode)?;
    let ps = input.ps;
    next.tc = update_compound(state.tc, ps);
    next.b_compound = update_b_compound(state.b_compound, state.tc, ps);
    next.ta = update_tire_age(state.ta, ps);
    next.tw = update_tire_wear(state.tw, state.m_car, cfg.m_car_init(), state.tc, ps, &cfg.tires);
    next.b_outlap = ps.is_stop();
    Ok((next, t_lap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::WearCoefficients;

    fn cfg() -> RaceConfig {
        RaceConfig::default()
    }

    #[test]
    fn physical_update_examples() {
        let cfg = cfg();
        let s = RaceState { e_b: 2.0, ..RaceState::initial(&cfg) };
        let inp = ControlInput::new(-1.0, cfg.de_f_nom(), PitAction::STAY);
        let n = step_physical(&s, &inp, 93.0, &cfg, StepMode::Strict).unwrap();
        assert_eq!(n.e_b, 1.0);
        assert!((n.e_f - 4263.859_649_122_807).abs() < 1e-9);
        assert_eq!(n.t_race, 93.0);

        let mut wide = cfg.clone();
        wide.de_f_band = [0.5, 1.5];
        let inp = ControlInput::new(0.0, 86.8, PitAction::STAY);
        let n = step_physical(&RaceState::initial(&wide), &inp, 93.0, &wide, StepMode::Strict).unwrap();
        assert!((n.m_car - 896.0).abs() < 1e-12);
    }

    #[test]
    fn strict_mode_rejects_bound_violations() {
        let cfg = cfg();
        let s = RaceState { e_b: 0.5, ..RaceState::initial(&cfg) };
        let inp = ControlInput::new(-1.0, cfg.de_f_nom(), PitAction::STAY);
        let err = step_physical(&s, &inp, 93.0, &cfg, StepMode::Strict).unwrap_err();
        assert!(matches!(err, ModelError::BoundViolation { quantity: "e_b", .. }));
        let (n, _) = step(&s, &inp, &cfg, StepMode::Clamping).unwrap();
        assert_eq!(n.e_b, 0.0);
    }

    #[test]
    fn discrete_updates() {
        use Compound::*;
        let p = |c: u8| PitAction::new(c).unwrap();
        assert_eq!(update_compound(Medium, p(0)), Medium);
        assert_eq!(update_compound(Soft, p(3)), Hard);
        assert_eq!(update_compound(Hard, p(3)), Hard);
        assert_eq!(update_b_compound(0, Soft, p(3)), 1);
        assert_eq!(update_b_compound(0, Medium, p(2)), 0);
        assert_eq!(update_b_compound(1, Soft, p(0)), 1);
        assert_eq!(update_tire_age(7, p(2)), 0);
        assert_eq!(update_tire_age(0, p(0)), 1);
        assert_eq!(update_tire_age(20, p(0)), 21);
    }

    #[test]
    fn wear_examples() {
        let mut tires = TireParams::default();
        tires.soft.wear = WearCoefficients { a: 1.06, b: 0.004, c: 0.012 };
        tires.hard.wear = WearCoefficients { a: 1.01, b: 0.002, c: 0.006 };
        let w = update_tire_wear(0.2, 898.0, 898.0, Compound::Soft, PitAction::STAY, &tires);
        assert!((w - 0.228).abs() < 1e-12);
        let w = update_tire_wear(0.0, 898.0, 898.0, Compound::Hard, PitAction::STAY, &tires);
        assert!((w - 0.008).abs() < 1e-12);
        let w = update_tire_wear(0.4, 898.0, 898.0, Compound::Soft, PitAction::pit_for(Compound::Soft), &tires);
        assert_eq!(w, 0.0);
        let w = update_tire_wear(0.99, 898.0, 898.0, Compound::Soft, PitAction::STAY, &tires);
        assert_eq!(w, 1.0);
    }

    #[test]
    fn reference_laps_on_fresh_softs() {
        let mut cfg = cfg();
        cfg.tc_init = Compound::Soft;
        let s0 = RaceState::initial(&cfg);
        let (_, t) = step(&s0, &ControlInput::nominal(&cfg, PitAction::STAY), &cfg, StepMode::Strict).unwrap();
        assert!((t - 93.1).abs() < 1e-9);
        let pit = ControlInput::nominal(&cfg, PitAction::pit_for(Compound::Medium));
        let (_, t) = step(&s0, &pit, &cfg, StepMode::Strict).unwrap();
        assert!((t - 104.6).abs() < 1e-9);
        let out = RaceState { b_outlap: true, ..s0 };
        let (_, t) = step(&out, &ControlInput::nominal(&cfg, PitAction::STAY), &cfg, StepMode::Strict).unwrap();
        assert!((t - 108.2).abs() < 1e-9);
    }

    #[test]
    fn fresh_medium_start_adds_offset() {
        let cfg = cfg();
        let s0 = RaceState::initial(&cfg);
        let (_, t) = step(&s0, &ControlInput::nominal(&cfg, PitAction::STAY), &cfg, StepMode::Strict).unwrap();
        assert!((t - (93.1 + cfg.tires.medium.correction.d)).abs() < 1e-9);
    }
}
