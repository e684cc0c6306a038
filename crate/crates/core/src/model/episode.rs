use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{step, ControlInput, RaceState, StepMode};
use crate::compound::Compound;
use crate::config::RaceConfig;
use crate::error::ModelError;
use crate::laptime::LapKind;

/// One simulated lap: the state at the start of lap `k`, the input applied
/// during it and the resulting lap time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapRecord {
    pub k: usize,
    pub state: RaceState,
    pub input: ControlInput,
    pub kind: LapKind,
    pub t_lap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    /// Lap index of the first record (0 for a full race).
    pub start_lap: usize,
    pub laps: Vec<LapRecord>,
    pub final_state: RaceState,
    pub t_race: f64,
    /// At least one compound change happened.
    pub legal: bool,
}

/// CSV row: state at the start of lap `k`, the lap's inputs and lap time, and
/// the race time at the end of the lap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapRow {
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
}

impl EpisodeLog {
    /// States at the start of every lap followed by the final state.
    pub fn states(&self) -> Vec<RaceState> {
        let mut out: Vec<RaceState> = self.laps.iter().map(|l| l.state).collect();
        out.push(self.final_state);
        out
    }

    pub fn inputs(&self) -> Vec<ControlInput> {
        self.laps.iter().map(|l| l.input).collect()
    }

    pub fn lap_times(&self) -> Vec<f64> {
        self.laps.iter().map(|l| l.t_lap).collect()
    }

    pub fn stop_laps(&self) -> Vec<usize> {
        self.laps.iter().filter(|l| l.input.ps.is_stop()).map(|l| l.k).collect()
    }

    pub fn rows(&self) -> Vec<LapRow> {
        let states = self.states();
        self.laps
            .iter()
            .enumerate()
            .map(|(i, l)| LapRow {
                k: l.k,
                e_b: l.state.e_b,
                e_f: l.state.e_f,
                m_car: l.state.m_car,
                tw: l.state.tw,
                tc: l.state.tc,
                ps: l.input.ps.code(),
                de_b: l.input.de_b,
                de_f: l.input.de_f,
                t_lap: l.t_lap,
                t_race: states[i + 1].t_race,
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

    /// One lap record per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for lap in &self.laps {
            serde_json::to_writer(&mut w, lap)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Full race from the green flag with strict bound checking.
pub fn simulate_strategy(cfg: &RaceConfig, inputs: &[ControlInput]) -> Result<EpisodeLog, ModelError> {
    cfg.validate()?;
    simulate_from(cfg, RaceState::initial(cfg), 0, inputs)
}

/// Strict rollout of `inputs` for laps `k0..n_laps` starting from `start`.
pub fn simulate_from(cfg: &RaceConfig, start: RaceState, k0: usize, inputs: &[ControlInput]) -> Result<EpisodeLog, ModelError> {
    if k0 + inputs.len() != cfg.n_laps {
        return Err(ModelError::InfeasibleStrategy {
            lap: k0,
            constraint: format!("expected {} inputs, got {}", cfg.n_laps - k0.min(cfg.n_laps), inputs.len()),
        });
    }
    let mut state = start;
    let mut laps = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let k = k0 + i;
        if input.ps.is_stop() && cfg.is_forbidden_lap(k) {
            return Err(ModelError::InfeasibleStrategy { lap: k, constraint: "pit stop on a forbidden lap".into() });
        }
        let (next, t_lap) = step(&state, input, cfg, StepMode::Strict)
            .map_err(|e| ModelError::InfeasibleStrategy { lap: k, constraint: e.to_string() })?;
        let kind = crate::laptime::lap_kind(input.ps, state.b_outlap);
        laps.push(LapRecord { k, state, input: *input, kind, t_lap });
        state = next;
    }
    Ok(EpisodeLog { start_lap: k0, laps, final_state: state, t_race: state.t_race, legal: state.b_compound >= 1 })
}
