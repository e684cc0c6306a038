use serde::{Deserialize, Serialize};

use super::nlp::NlpOptions;
use super::ocp::{solve_node, OcpProblem, PsDomain};
use crate::error::OptimizeError;
use crate::model::{strategy_of, ControlInput, EpisodeLog, RaceState, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Gap closed to the requested tolerance.
    Optimal,
    /// Node budget spent; the gap is best effort.
    NodeLimit,
    /// Every schedule was enumerated.
    Exhaustive,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub nodes: usize,
    pub nlp_solves: usize,
    pub nlp_iterations: usize,
    pub wall_time_s: f64,
}

/// Search-tree bookkeeping of one processed node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub lower_bound: f64,
    pub domains: Vec<PsDomain>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    pub start_lap: usize,
    pub strategy: Strategy,
    pub inputs: Vec<ControlInput>,
    /// States at the start of every lap followed by the final state.
    pub states: Vec<RaceState>,
    pub lap_times: Vec<f64>,
    pub t_race: f64,
    pub lower_bound: f64,
    pub gap: f64,
    pub status: SolveStatus,
    pub stats: SolverStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tree: Vec<NodeRecord>,
}

impl OcpSolution {
    pub(crate) fn from_log(log: &EpisodeLog, status: SolveStatus) -> Self {
        OcpSolution {
            start_lap: log.start_lap,
            strategy: strategy_of(log),
            inputs: log.inputs(),
            states: log.states(),
            lap_times: log.lap_times(),
            t_race: log.t_race,
            lower_bound: log.t_race,
            gap: 0.0,
            status,
            stats: SolverStats::default(),
            tree: Vec::new(),
        }
    }

    pub fn final_state(&self) -> &RaceState {
        self.states.last().expect("solutions hold at least the start state")
    }

    pub fn stop_laps(&self) -> Vec<usize> {
        self.strategy.stop_laps()
    }

    /// Pit codes per lap.
    pub fn schedule(&self) -> Vec<u8> {
        self.inputs.iter().map(|i| i.ps.code()).collect()
    }
}

/// A fixed pit schedule with its optimized energy allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafSolution {
    pub schedule: Vec<u8>,
    pub x: Vec<f64>,
    pub log: EpisodeLog,
    pub iterations: usize,
}

impl LeafSolution {
    pub fn t_race(&self) -> f64 {
        self.log.t_race
    }
}

/// Optimizes the continuous inputs for a fixed pit schedule and verifies the
/// result with the strict simulator.
pub fn solve_schedule(problem: &OcpProblem, schedule: &[u8], x0: Option<&[f64]>, opts: &NlpOptions) -> Result<LeafSolution, OptimizeError> {
    if !problem.admissible(schedule) {
        return Err(OptimizeError::Infeasible(format!("schedule {schedule:?} is not admissible")));
    }
    let domains: Vec<PsDomain> = schedule.iter().map(|&c| [c, c]).collect();
    let start: Option<Vec<f64>> = x0.map(|x| {
        let mut x = x.to_vec();
        for (i, &c) in schedule.iter().enumerate() {
            x[3 * i + 2] = c as f64;
        }
        x
    });
    let (relaxed, iterations) = solve_node(problem, &domains, start.as_deref(), opts, 1e-6);
    let relaxed = relaxed.ok_or_else(|| OptimizeError::Infeasible(format!("no feasible energy allocation for {schedule:?}")))?;
    let inputs = problem.repair(&relaxed.x, schedule);
    let log = problem.simulate(&inputs)?;
    Ok(LeafSolution { schedule: schedule.to_vec(), x: relaxed.x, log, iterations })
}
