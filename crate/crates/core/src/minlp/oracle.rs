//! Exhaustive enumeration of pit schedules, each with its own continuous
//! solve. Only usable on short races.

use std::time::Instant;

use super::bnb::parallel_map;
use super::nlp::NlpOptions;
use super::ocp::OcpProblem;
use super::solution::{solve_schedule, LeafSolution, OcpSolution, SolveStatus, SolverStats};
use crate::error::OptimizeError;

/// Enumeration size above which the oracle refuses to run.
pub const ORACLE_LIMIT: f64 = 1e6;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Upper estimate of the number of schedules with at most `max_stops` stops
/// on the open laps of `problem`.
pub fn schedule_count(problem: &OcpProblem, max_stops: usize) -> f64 {
    let open = problem.domains().iter().filter(|d| d[1] > 0).count();
    (0..=max_stops.min(open)).map(|s| binomial(open, s) * 3f64.powi(s as i32)).sum()
}

/// Every schedule with at most `max_stops` stops on open laps that respects
/// the minimum stop spacing, including the schedule without stops.
pub fn enumerate_schedules(problem: &OcpProblem, max_stops: usize) -> Vec<Vec<u8>> {
    let h = problem.horizon();
    let open: Vec<usize> = (0..h).filter(|&i| problem.domains()[i][1] > 0).collect();
    let mut out = Vec::new();
    let mut cur = vec![0u8; h];
    fn rec(open: &[usize], from: usize, left: usize, gap: usize, last: Option<usize>, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        out.push(cur.clone());
        if left == 0 {
            return;
        }
        for j in from..open.len() {
            let lap = open[j];
            if last.is_some_and(|l| lap - l < gap) {
                continue;
            }
            for c in 1..=3u8 {
                cur[lap] = c;
                rec(open, j + 1, left - 1, gap, Some(lap), cur, out);
            }
            cur[lap] = 0;
        }
    }
    rec(&open, 0, max_stops, problem.space.min_gap, None, &mut cur, &mut out);
    out
}

/// Global best over all schedules with at most `max_stops` stops (further
/// capped by the problem's stop budget). `stats.nodes` is the number of
/// schedules enumerated.
pub fn exhaustive_oracle(problem: &OcpProblem, max_stops: usize) -> Result<OcpSolution, OptimizeError> {
    exhaustive_oracle_with(problem, max_stops, &NlpOptions::default(), 0)
}

pub fn exhaustive_oracle_with(problem: &OcpProblem, max_stops: usize, nlp: &NlpOptions, workers: usize) -> Result<OcpSolution, OptimizeError> {
    let started = Instant::now();
    let stops = max_stops.min(problem.stop_budget());
    let count = schedule_count(problem, stops);
    if count > ORACLE_LIMIT {
        return Err(OptimizeError::TooLarge { schedules: count });
    }
    let schedules = enumerate_schedules(problem, stops);
    let workers = if workers == 0 { std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1) } else { workers };
    let results: Vec<Option<LeafSolution>> = parallel_map(&schedules, workers, |s| {
        if problem.admissible(s) {
            solve_schedule(problem, s, None, nlp).ok()
        } else {
            None
        }
    });
    let nlp_solves = schedules.iter().filter(|s| problem.admissible(s)).count();
    let nlp_iterations = results.iter().flatten().map(|l| l.iterations).sum();
    // First minimum in enumeration order.
    let best = results
        .into_iter()
        .flatten()
        .fold(None::<LeafSolution>, |acc, l| match acc {
            Some(a) if a.t_race() <= l.t_race() => Some(a),
            _ => Some(l),
        })
        .ok_or_else(|| OptimizeError::Infeasible("no enumerated schedule is feasible".into()))?;
    let mut sol = OcpSolution::from_log(&best.log, SolveStatus::Exhaustive);
    sol.stats = SolverStats { nodes: schedules.len(), nlp_solves, nlp_iterations, wall_time_s: started.elapsed().as_secs_f64() };
    Ok(sol)
}
