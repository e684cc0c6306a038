//! Nominal and disturbed race comparisons between the mixed-integer
//! optimizer, the trained policy and the go-long heuristic.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::{evaluate, PolicyParams};
use crate::compound::Compound;
use crate::config::RaceConfig;
use crate::env::{Disturbance, ScenarioSpec, DEFAULT_DISTURBANCE_LAP, DEFAULT_TW_DELTA};
use crate::error::{BenchError, OptimizeError};
use crate::minlp::{branch_and_bound, solve_schedule, BnbOptions, NlpOptions, OcpProblem, OcpSolution, SearchSpace};
use crate::model::{simulate_from, strategy_of, ControlInput, EpisodeLog, LapRow, RaceState};

pub const MINLP: &str = "minlp";
pub const RL: &str = "rl";
pub const HEURISTIC: &str = "heuristic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchOptions {
    pub bnb: BnbOptions,
    /// Laps between the disturbance and the go-long stop.
    pub reaction_delay: usize,
    pub seeds: Vec<u64>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { bnb: BnbOptions { deterministic: true, ..BnbOptions::default() }, reaction_delay: 2, seeds: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub strategy: String,
    pub t_race: f64,
    /// Race time minus the optimizer's race time.
    pub delta_t_race: f64,
    pub stop_laps: Vec<usize>,
    pub wall_time_s: f64,
    pub final_e_b: f64,
    pub final_e_f: f64,
    pub laps: Vec<LapRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmFailure {
    pub name: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub scenario: String,
    pub config_digest: String,
    pub n_laps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<Disturbance>,
    pub seeds: Vec<u64>,
    pub version: String,
    pub arms: Vec<ArmReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<ArmFailure>,
}

impl BenchmarkReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.name == name)
    }
}

fn arm_from_log(name: &str, log: &EpisodeLog, reference: f64, wall: f64) -> ArmReport {
    ArmReport {
        name: name.into(),
        strategy: strategy_of(log).to_string(),
        t_race: log.t_race,
        delta_t_race: log.t_race - reference,
        stop_laps: log.stop_laps(),
        wall_time_s: wall,
        final_e_b: log.final_state.e_b,
        final_e_f: log.final_state.e_f,
        laps: log.rows(),
    }
}

fn solution_log(cfg: &RaceConfig, sol: &OcpSolution) -> Result<EpisodeLog, BenchError> {
    Ok(simulate_from(cfg, sol.states[0], sol.start_lap, &sol.inputs)?)
}

/// Search space of the optimizer arms. The environment lets a stop happen on
/// the final lap, so the optimizer may too.
pub fn bench_space(cfg: &RaceConfig) -> SearchSpace {
    SearchSpace { allow_last_lap: true, ..SearchSpace::from_config(cfg) }
}

/// Optimizer plan for the full race.
pub fn solve_nominal(cfg: &RaceConfig, opts: &BenchOptions) -> Result<OcpSolution, OptimizeError> {
    let p = OcpProblem::new(cfg, bench_space(cfg))?;
    branch_and_bound(&p, &opts.bnb)
}

fn report(scenario: &str, cfg: &RaceConfig, disturbance: Option<Disturbance>, opts: &BenchOptions) -> BenchmarkReport {
    BenchmarkReport {
        scenario: scenario.into(),
        config_digest: cfg.digest(),
        n_laps: cfg.n_laps,
        disturbance,
        seeds: opts.seeds.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        arms: Vec::new(),
        failures: Vec::new(),
    }
}

/// Optimizer against the deterministic policy on the undisturbed race.
pub fn run_nominal(cfg: &RaceConfig, policy: &PolicyParams, opts: &BenchOptions) -> Result<BenchmarkReport, BenchError> {
    let mut rep = report("nominal", cfg, None, opts);
    let t0 = Instant::now();
    let plan = solve_nominal(cfg, opts).map_err(|source| BenchError::Arm { arm: MINLP, source })?;
    let wall = t0.elapsed().as_secs_f64();
    let log = solution_log(cfg, &plan)?;
    rep.arms.push(arm_from_log(MINLP, &log, plan.t_race, wall));
    let t0 = Instant::now();
    let ev = evaluate(policy, &ScenarioSpec::nominal(cfg.clone()), Some(plan.t_race))?;
    rep.arms.push(arm_from_log(RL, &ev.log, plan.t_race, t0.elapsed().as_secs_f64()));
    Ok(rep)
}

/// State at the start of lap `lap + 1` after following `plan` through `lap`
/// and applying the wear jump.
pub fn disturbed_state(plan: &OcpSolution, d: &Disturbance) -> RaceState {
    let mut s = plan.states[d.lap + 1 - plan.start_lap];
    s.tw = (s.tw + d.tw_delta).clamp(0.0, 1.0);
    s
}

/// Problem for the rest of the race after the disturbance, carrying over the
/// stops already made.
pub fn resume_problem(cfg: &RaceConfig, plan: &OcpSolution, d: &Disturbance) -> Result<OcpProblem, OptimizeError> {
    let k0 = d.lap + 1;
    let before: Vec<usize> = plan.stop_laps().into_iter().filter(|&l| l < k0).collect();
    Ok(OcpProblem::from_state(cfg, bench_space(cfg), k0, disturbed_state(plan, d), before.len(), before.last().copied())?)
}

/// Go-long reaction: a single stop for hards `delay` laps after the
/// disturbance, energy re-optimized around it.
pub fn go_long(problem: &OcpProblem, disturbance_lap: usize, delay: usize, nlp: &NlpOptions) -> Result<Vec<ControlInput>, OptimizeError> {
    let stop = (disturbance_lap + delay).max(problem.k0);
    let h = problem.horizon();
    if stop >= problem.k0 + h {
        return Err(OptimizeError::Infeasible(format!("go-long stop at lap {stop} is after the flag")));
    }
    let mut schedule = vec![0u8; h];
    schedule[stop - problem.k0] = Compound::Hard.code();
    Ok(solve_schedule(problem, &schedule, None, nlp)?.log.inputs())
}

fn join(prefix: &EpisodeLog, upto: usize, rest: &EpisodeLog) -> EpisodeLog {
    let mut laps: Vec<_> = prefix.laps.iter().filter(|l| l.k < upto).cloned().collect();
    laps.extend(rest.laps.iter().cloned());
    EpisodeLog { start_lap: prefix.start_lap, laps, final_state: rest.final_state, t_race: rest.t_race, legal: rest.legal }
}

/// Disturbed race: causal re-solve, policy and go-long heuristic. `plan` is
/// the nominal optimizer plan; it is computed when absent.
pub fn run_disturbance(
    cfg: &RaceConfig,
    disturbance: Disturbance,
    policy: &PolicyParams,
    plan: Option<&OcpSolution>,
    opts: &BenchOptions,
) -> Result<BenchmarkReport, BenchError> {
    let spec = ScenarioSpec::nominal(cfg.clone()).with_disturbance(disturbance.lap, disturbance.tw_delta);
    spec.validate().map_err(|e| BenchError::Env(e.into()))?;
    let mut rep = report("disturbance", cfg, Some(disturbance), opts);
    let t0 = Instant::now();
    let owned;
    let plan = match plan {
        Some(p) => p,
        None => {
            owned = solve_nominal(cfg, opts).map_err(|source| BenchError::Arm { arm: MINLP, source })?;
            &owned
        }
    };
    let nominal_log = solution_log(cfg, plan)?;
    let k0 = disturbance.lap + 1;
    let problem = resume_problem(cfg, plan, &disturbance).map_err(|source| BenchError::Arm { arm: MINLP, source })?;
    let resolved = branch_and_bound(&problem, &opts.bnb).map_err(|source| BenchError::Arm { arm: MINLP, source })?;
    let causal = join(&nominal_log, k0, &simulate_from(cfg, problem.start, k0, &resolved.inputs)?);
    let reference = causal.t_race;
    rep.arms.push(arm_from_log(MINLP, &causal, reference, t0.elapsed().as_secs_f64()));

    let t0 = Instant::now();
    let ev = evaluate(policy, &spec, Some(reference))?;
    rep.arms.push(arm_from_log(RL, &ev.log, reference, t0.elapsed().as_secs_f64()));

    let t0 = Instant::now();
    match go_long(&problem, disturbance.lap, opts.reaction_delay, &opts.bnb.nlp) {
        Ok(inputs) => {
            let log = join(&nominal_log, k0, &simulate_from(cfg, problem.start, k0, &inputs)?);
            rep.arms.push(arm_from_log(HEURISTIC, &log, reference, t0.elapsed().as_secs_f64()));
        }
        Err(e) => rep.failures.push(ArmFailure { name: HEURISTIC.into(), error: e.to_string() }),
    }
    Ok(rep)
}

/// Default disturbance: wear jump of 0.3 on lap 22.
pub fn default_disturbance() -> Disturbance {
    Disturbance { lap: DEFAULT_DISTURBANCE_LAP, tw_delta: DEFAULT_TW_DELTA }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Md,
}

#[derive(Debug, Serialize)]
struct DiffRow<'a> {
    arm: &'a str,
    k: usize,
    d_de_b: f64,
    d_de_f: f64,
    d_e_b: f64,
    d_e_f: f64,
    d_t_lap: f64,
}

/// Per-lap table of every arm.
pub fn laps_csv(report: &BenchmarkReport) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["arm", "k", "e_b", "e_f", "m_car", "tw", "tc", "ps", "de_b", "de_f", "t_lap", "t_race"]).map_err(ser)?;
    for arm in &report.arms {
        for r in &arm.laps {
            w.write_record([
                arm.name.clone(),
                r.k.to_string(),
                r.e_b.to_string(),
                r.e_f.to_string(),
                r.m_car.to_string(),
                r.tw.to_string(),
                r.tc.to_string(),
                r.ps.to_string(),
                r.de_b.to_string(),
                r.de_f.to_string(),
                r.t_lap.to_string(),
                r.t_race.to_string(),
            ])
            .map_err(ser)?;
        }
    }
    String::from_utf8(w.into_inner().map_err(ser)?).map_err(ser)
}

/// Per-lap energy allocation of every arm minus the optimizer's.
pub fn energy_diff_csv(report: &BenchmarkReport) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(base) = report.arm(MINLP) {
        for arm in report.arms.iter().filter(|a| a.name != MINLP) {
            for (a, b) in arm.laps.iter().zip(&base.laps) {
                w.serialize(DiffRow {
                    arm: &arm.name,
                    k: a.k,
                    d_de_b: a.de_b - b.de_b,
                    d_de_f: a.de_f - b.de_f,
                    d_e_b: a.e_b - b.e_b,
                    d_e_f: a.e_f - b.e_f,
                    d_t_lap: a.t_lap - b.t_lap,
                })
                .map_err(ser)?;
            }
        }
    }
    String::from_utf8(w.into_inner().map_err(ser)?).map_err(ser)
}

pub fn summary_markdown(report: &BenchmarkReport) -> String {
    let mut s = format!("# {} race ({} laps)\n\n", report.scenario, report.n_laps);
    if let Some(d) = report.disturbance {
        s += &format!("Tire wear +{} after lap {}.\n\n", d.tw_delta, d.lap);
    }
    s += "| Method | Strategy | Race time [s] | ΔT_race [s] | ΔT_race [%] | Wall time [s] |\n";
    s += "|---|---|---:|---:|---:|---:|\n";
    let base = report.arm(MINLP).map_or(f64::NAN, |a| a.t_race);
    for a in &report.arms {
        s += &format!(
            "| {} | {} | {:.3} | {:.3} | {:.3} | {:.3} |\n",
            a.name,
            a.strategy,
            a.t_race,
            a.delta_t_race,
            100.0 * a.delta_t_race / base,
            a.wall_time_s
        );
    }
    for f in &report.failures {
        s += &format!("| {} | failed: {} | | | | |\n", f.name, f.error);
    }
    s += &format!("\nConfig digest `{}`, version {}.\n", report.config_digest, report.version);
    s
}

fn ser<E: std::fmt::Display>(e: E) -> BenchError {
    BenchError::Serde(e.to_string())
}

/// Writes the requested formats into `dir` and returns the files written.
pub fn emit_report(report: &BenchmarkReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>, BenchError> {
    fs::create_dir_all(dir)?;
    let stem = &report.scenario;
    let mut out = Vec::new();
    for f in formats {
        match f {
            ReportFormat::Json => {
                let p = dir.join(format!("{stem}.json"));
                fs::write(&p, serde_json::to_string_pretty(report).map_err(ser)?)?;
                out.push(p);
            }
            ReportFormat::Csv => {
                let p = dir.join(format!("{stem}_laps.csv"));
                fs::write(&p, laps_csv(report)?)?;
                out.push(p);
                let p = dir.join(format!("{stem}_energy_diff.csv"));
                fs::write(&p, energy_diff_csv(report)?)?;
                out.push(p);
            }
            ReportFormat::Md => {
                let p = dir.join(format!("{stem}.md"));
                fs::write(&p, summary_markdown(report))?;
                out.push(p);
            }
        }
    }
    Ok(out)
}

pub fn load_report(path: &Path) -> Result<BenchmarkReport, BenchError> {
    serde_json::from_str(&fs::read_to_string(path)?).map_err(ser)
}
