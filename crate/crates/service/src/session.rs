//! Live sessions and their on-disk form: `spec.json`, an append-only
//! `log.jsonl` synced after every record, and `result.json` once finished.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use racestrat::agent::{greedy_action, policy_forward, PolicyParams};
use racestrat::compound::PitAction;
use racestrat::env::{AgentAction, EnvLapRow, Observation, RaceEnv, ScenarioSpec, StepResult};
use racestrat::model::strategy_of;
use racestrat::RaceState;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Manual,
    AgentAssisted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Manual,
    Agent,
}

/// One line of `log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Step { lap: usize, source: Source, action: AgentAction, result: StepResult },
    Disturbance { lap: usize, tw_delta: f64, tw: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SessionMeta {
    id: Uuid,
    mode: Mode,
    spec: ScenarioSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub t_race: f64,
    pub strategy: String,
    pub stop_laps: Vec<usize>,
    pub legal: bool,
    pub laps: Vec<EnvLapRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitProbability {
    pub ps: PitAction,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub lap: usize,
    pub action: AgentAction,
    /// Pit codes by decreasing probability.
    pub top_k: Vec<PitProbability>,
}

pub fn recommend(params: &PolicyParams, obs: &Observation, lap: usize, k: usize) -> Result<Recommendation, ApiError> {
    let action = greedy_action(obs, params).map_err(ApiError::internal)?;
    let out = policy_forward(obs, params).map_err(ApiError::internal)?;
    let mut top: Vec<PitProbability> =
        out.pit_probs.iter().enumerate().map(|(i, &p)| PitProbability { ps: PitAction::new(i as u8).expect("pit code"), prob: p }).collect();
    top.sort_by(|a, b| b.prob.total_cmp(&a.prob).then(a.ps.code().cmp(&b.ps.code())));
    top.truncate(k.max(1));
    Ok(Recommendation { lap, action, top_k: top })
}

/// Lap summary returned by the state endpoint and sent when a stream opens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: Uuid,
    pub mode: Mode,
    pub status: Status,
    pub lap: usize,
    pub n_laps: usize,
    pub state: RaceState,
    pub observation: Observation,
    pub t_lap_prev: f64,
    pub strategy: String,
    pub stops: usize,
    pub spec: ScenarioSpec,
}

pub struct Session {
    pub id: Uuid,
    pub mode: Mode,
    pub env: RaceEnv,
    dir: PathBuf,
    log: File,
}

pub fn session_dir(data_dir: &Path, id: Uuid) -> PathBuf {
    data_dir.join("sessions").join(id.to_string())
}

fn write_synced(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

impl Session {
    pub fn create(data_dir: &Path, spec: ScenarioSpec, mode: Mode) -> Result<Self, ApiError> {
        let env = RaceEnv::new(spec.clone()).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        let id = Uuid::new_v4();
        let dir = session_dir(data_dir, id);
        fs::create_dir_all(&dir)?;
        let meta = SessionMeta { id, mode, spec };
        write_synced(&dir.join("spec.json"), &serde_json::to_vec_pretty(&meta).map_err(ApiError::internal)?)?;
        let log = OpenOptions::new().create(true).append(true).open(dir.join("log.jsonl"))?;
        Ok(Session { id, mode, env, dir, log })
    }

    /// Rebuilds a session by replaying its log. A torn last line from a crash
    /// mid-write is cut off.
    pub fn restore(dir: &Path) -> anyhow::Result<Self> {
        let meta: SessionMeta = serde_json::from_slice(&fs::read(dir.join("spec.json"))?)?;
        let mut env = RaceEnv::new(meta.spec)?;
        let path = dir.join("log.jsonl");
        let mut good = 0u64;
        if path.exists() {
            let mut reader = BufReader::new(File::open(&path)?);
            let mut line = String::new();
            loop {
                line.clear();
                if reader.read_line(&mut line)? == 0 || !line.ends_with('\n') {
                    break;
                }
                let Ok(rec) = serde_json::from_str::<LogRecord>(&line) else { break };
                match rec {
                    LogRecord::Step { action, result, .. } => {
                        let r = env.step(&action)?;
                        anyhow::ensure!(r == result, "replay of lap {} diverged from the log", result.info.k);
                    }
                    LogRecord::Disturbance { tw_delta, .. } => env.inject_disturbance(tw_delta),
                }
                good += line.len() as u64;
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&path)?;
        if log.metadata()?.len() > good {
            log.set_len(good)?;
            log.sync_all()?;
        }
        Ok(Session { id: meta.id, mode: meta.mode, env, dir: dir.to_path_buf(), log })
    }

    pub fn status(&self) -> Status {
        if self.env.is_done() {
            Status::Finished
        } else {
            Status::Running
        }
    }

    pub fn stops(&self) -> Vec<usize> {
        self.env.infos().iter().filter(|i| i.applied.ps.is_stop()).map(|i| i.k).collect()
    }

    pub fn view(&self) -> SessionView {
        let snap = self.env.snapshot();
        SessionView {
            id: self.id,
            mode: self.mode,
            status: self.status(),
            lap: snap.k,
            n_laps: self.env.cfg().n_laps,
            state: snap.state,
            observation: self.env.observation(),
            t_lap_prev: snap.t_lap_prev,
            strategy: strategy_of(&self.env.episode_log()).to_string(),
            stops: self.stops().len(),
            spec: self.env.spec().clone(),
        }
    }

    fn append(&mut self, rec: &LogRecord) -> Result<(), ApiError> {
        let mut line = serde_json::to_vec(rec).map_err(ApiError::internal)?;
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.sync_data()?;
        Ok(())
    }

    pub fn step(&mut self, action: AgentAction, source: Source) -> Result<StepResult, ApiError> {
        if self.env.is_done() {
            return Err(ApiError::conflict("session is finished"));
        }
        let lap = self.env.lap();
        let result = self.env.step(&action).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        self.append(&LogRecord::Step { lap, source, action, result })?;
        if result.done {
            let log = self.env.episode_log();
            let res = SessionResult {
                t_race: log.t_race,
                strategy: strategy_of(&log).to_string(),
                stop_laps: log.stop_laps(),
                legal: log.legal,
                laps: self.env.rows(),
            };
            write_synced(&self.dir.join("result.json"), &serde_json::to_vec_pretty(&res).map_err(ApiError::internal)?)?;
        }
        Ok(result)
    }

    pub fn inject(&mut self, tw_delta: f64) -> Result<f64, ApiError> {
        if self.env.is_done() {
            return Err(ApiError::conflict("session is finished"));
        }
        self.env.inject_disturbance(tw_delta);
        let tw = self.env.state().tw;
        self.append(&LogRecord::Disturbance { lap: self.env.lap(), tw_delta, tw })?;
        Ok(tw)
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("log.jsonl")
    }
}

/// Checks a submitted action against the action space.
pub fn validate_action(a: &AgentAction) -> Result<(), ApiError> {
    if !(0.0..=1.0).contains(&a.f) {
        return Err(ApiError::unprocessable(format!("f = {} outside [0, 1]", a.f)));
    }
    if !(-1.0..=1.0).contains(&a.b) {
        return Err(ApiError::unprocessable(format!("b = {} outside [-1, 1]", a.b)));
    }
    Ok(())
}
