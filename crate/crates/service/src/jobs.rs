//! Optimizer jobs on a bounded worker pool.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use racestrat::minlp::{branch_and_bound_observed, BnbOptions, BnbProgress, OcpProblem, OcpSolution, SearchSpace};
use racestrat::{RaceConfig, RaceState};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use uuid::Uuid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

/// Mid-race start of a re-solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// First lap to optimize.
    pub k: usize,
    pub state: RaceState,
    #[serde(default)]
    pub stops_before: usize,
    #[serde(default)]
    pub last_stop: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobProblem {
    pub cfg: RaceConfig,
    pub space: SearchSpace,
    pub snapshot: Option<Snapshot>,
    pub options: BnbOptions,
}

impl JobProblem {
    pub fn build(&self) -> Result<OcpProblem, String> {
        match &self.snapshot {
            None => OcpProblem::new(&self.cfg, self.space),
            Some(s) => OcpProblem::from_state(&self.cfg, self.space, s.k, s.state, s.stops_before, s.last_stop),
        }
        .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct JobProgress {
    pub nodes: usize,
    pub incumbent: Option<f64>,
    pub lower_bound: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeJob {
    pub id: Uuid,
    pub status: JobStatus,
    pub problem: JobProblem,
    pub progress: JobProgress,
    pub result: Option<OcpSolution>,
    pub error: Option<String>,
}

impl OptimizeJob {
    pub fn new(problem: JobProblem) -> Self {
        OptimizeJob { id: Uuid::new_v4(), status: JobStatus::Queued, problem, progress: JobProgress::default(), result: None, error: None }
    }

    /// Takes a progress report, never letting the incumbent get worse.
    fn observe(&mut self, p: &BnbProgress) {
        let pr = &mut self.progress;
        pr.nodes = pr.nodes.max(p.nodes);
        if let Some(t) = p.incumbent {
            if pr.incumbent.is_none_or(|c| t < c) {
                pr.incumbent = Some(t);
            }
        }
        if p.lower_bound.is_finite() {
            pr.lower_bound = Some(p.lower_bound);
        }
        if let (Some(t), Some(lb)) = (pr.incumbent, pr.lower_bound) {
            pr.gap = Some((t - lb).max(0.0));
        }
    }

    fn finish(&mut self, out: Result<OcpSolution, String>) {
        match out {
            Ok(sol) => {
                self.progress.nodes = sol.stats.nodes;
                self.progress.incumbent = Some(sol.t_race);
                self.progress.lower_bound = Some(sol.lower_bound);
                self.progress.gap = Some(sol.gap);
                self.status = JobStatus::Done;
                self.result = Some(sol);
            }
            Err(e) => {
                self.status = JobStatus::Failed;
                self.error = Some(e);
            }
        }
    }
}

pub type JobHandle = Arc<Mutex<OptimizeJob>>;

#[derive(Clone)]
pub struct JobPool {
    permits: Arc<Semaphore>,
    dir: PathBuf,
}

impl JobPool {
    pub fn new(workers: usize, dir: PathBuf) -> Self {
        JobPool { permits: Arc::new(Semaphore::new(workers.max(1))), dir }
    }

    /// Queues the job; it starts once a worker is free.
    pub fn submit(&self, job: JobHandle) {
        let permits = self.permits.clone();
        let dir = self.dir.clone();
        tokio::spawn(async move {
            let Ok(_permit) = permits.acquire_owned().await else { return };
            let (problem, id) = {
                let mut j = job.lock().expect("job lock");
                j.status = JobStatus::Running;
                (j.problem.clone(), j.id)
            };
            let worker = job.clone();
            let out = tokio::task::spawn_blocking(move || {
                let p = problem.build()?;
                branch_and_bound_observed(&p, &problem.options, &|pr| worker.lock().expect("job lock").observe(pr)).map_err(|e| e.to_string())
            })
            .await
            .unwrap_or_else(|e| Err(format!("optimizer worker panicked: {e}")));
            let snapshot = {
                let mut j = job.lock().expect("job lock");
                j.finish(out);
                j.clone()
            };
            let persisted = std::fs::create_dir_all(&dir).and_then(|_| {
                let bytes = serde_json::to_vec(&snapshot).map_err(std::io::Error::other)?;
                std::fs::write(dir.join(format!("{id}.json")), bytes)
            });
            if let Err(e) = persisted {
                log::warn!("could not persist job {id}: {e}");
            }
        });
    }
}
