//! Branch-and-bound over the pit codes with smooth relaxations as node bounds.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::nlp::NlpOptions;
use super::ocp::{solve_node, OcpProblem, PsDomain};
use super::solution::{solve_schedule, LeafSolution, NodeRecord, OcpSolution, SolveStatus, SolverStats};
use super::warm::{neighbors, nominal_schedules};
use crate::error::OptimizeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BnbOptions {
    /// Absolute optimality gap (s) at which a subtree is pruned.
    pub gap: f64,
    pub max_nodes: usize,
    /// Wall-clock limit (s); exceeding it is a `Timeout`.
    pub time_limit_s: Option<f64>,
    /// Overrides the problem's total stop cap.
    pub max_stops: Option<usize>,
    /// Single worker and a fixed node order.
    pub deterministic: bool,
    /// Worker threads in parallel mode; 0 picks the available parallelism.
    pub workers: usize,
    /// Relaxations violating the constraints by more than this are pruned.
    pub feasibility_tol: f64,
    /// Improve the seed incumbent by moving and re-tiring single stops.
    pub local_search: bool,
    /// Keep a record of every processed node.
    pub record_tree: bool,
    pub nlp: NlpOptions,
}

impl Default for BnbOptions {
    fn default() -> Self {
        BnbOptions {
            gap: 0.05,
            max_nodes: 200,
            time_limit_s: None,
            max_stops: None,
            deterministic: false,
            workers: 0,
            feasibility_tol: 1e-6,
            local_search: true,
            record_tree: false,
            nlp: NlpOptions::default(),
        }
    }
}

/// A node of the search tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnBNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub domains: Vec<PsDomain>,
    /// Bound inherited from the parent until the node is solved.
    pub lower_bound: f64,
    #[serde(skip)]
    warm: Option<Vec<f64>>,
}

struct Open(BnBNode);

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Open {
    // Max-heap order: smallest bound first, then the older node.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.lower_bound.total_cmp(&self.0.lower_bound).then(other.0.id.cmp(&self.0.id))
    }
}

/// Incumbent shared between workers. The objective is mirrored in an atomic
/// so the pruning test never takes the lock.
struct Incumbent {
    bits: AtomicU64,
    best: Mutex<Option<LeafSolution>>,
}

impl Incumbent {
    fn new() -> Self {
        Incumbent { bits: AtomicU64::new(f64::INFINITY.to_bits()), best: Mutex::new(None) }
    }

    fn value(&self) -> f64 {
        f64::from_bits(self.bits.load(AtomicOrdering::Acquire))
    }

    fn offer(&self, leaf: LeafSolution) -> bool {
        let t = leaf.t_race();
        let mut cur = self.bits.load(AtomicOrdering::Acquire);
        loop {
            let cur_v = f64::from_bits(cur);
            if !(t < cur_v) {
                return false;
            }
            match self.bits.compare_exchange(cur, t.to_bits(), AtomicOrdering::AcqRel, AtomicOrdering::Acquire) {
                Ok(_) => break,
                Err(actual) => cur = actual,
            }
        }
        let mut best = self.best.lock().expect("incumbent lock");
        if best.as_ref().is_none_or(|b| t < b.t_race()) {
            *best = Some(leaf);
        }
        true
    }
}

/// Shared leaf evaluator with a schedule cache.
struct Leaves<'a> {
    problem: &'a OcpProblem,
    nlp: &'a NlpOptions,
    cache: Mutex<HashMap<Vec<u8>, Option<f64>>>,
    solves: AtomicU64,
    iterations: AtomicU64,
}

impl<'a> Leaves<'a> {
    fn new(problem: &'a OcpProblem, nlp: &'a NlpOptions) -> Self {
        Leaves { problem, nlp, cache: Mutex::new(HashMap::new()), solves: AtomicU64::new(0), iterations: AtomicU64::new(0) }
    }

    fn count(&self, iterations: usize) {
        self.solves.fetch_add(1, AtomicOrdering::Relaxed);
        self.iterations.fetch_add(iterations as u64, AtomicOrdering::Relaxed);
    }

    /// Solves a schedule once and offers it to the incumbent; returns its race
    /// time when feasible.
    fn evaluate(&self, sched: &[u8], x0: Option<&[f64]>, inc: &Incumbent) -> Option<f64> {
        if let Some(v) = self.cache.lock().expect("cache lock").get(sched) {
            return *v;
        }
        let res = solve_schedule(self.problem, sched, x0, self.nlp);
        let value = match res {
            Ok(leaf) => {
                self.count(leaf.iterations);
                let t = leaf.t_race();
                inc.offer(leaf);
                Some(t)
            }
            Err(_) => {
                self.count(0);
                None
            }
        };
        self.cache.lock().expect("cache lock").insert(sched.to_vec(), value);
        value
    }
}

enum Outcome {
    Pruned { bound: f64 },
    Infeasible,
    Branch { bound: f64, children: [BnBNode; 2] },
}

/// Rounds relaxed pit codes into the domains, then drops stops, earliest
/// kept, until the spacing and budget rules hold.
fn round_schedule(problem: &OcpProblem, ps: &[f64], domains: &[PsDomain]) -> Vec<u8> {
    let mut sched: Vec<u8> = ps.iter().zip(domains).map(|(&p, d)| p.round().clamp(d[0] as f64, d[1] as f64) as u8).collect();
    let mut last: Option<usize> = None;
    let mut count = 0;
    for i in 0..sched.len() {
        if sched[i] == 0 {
            continue;
        }
        if last.is_some_and(|l| i - l < problem.space.min_gap) || count == problem.stop_budget() {
            sched[i] = 0;
        } else {
            last = Some(i);
            count += 1;
        }
    }
    sched
}

fn process(node: &BnBNode, problem: &OcpProblem, opts: &BnbOptions, leaves: &Leaves, inc: &Incumbent, next_id: &mut dyn FnMut() -> usize) -> Outcome {
    let (relaxed, iterations) = solve_node(problem, &node.domains, node.warm.as_deref(), &opts.nlp, opts.feasibility_tol);
    leaves.count(iterations);
    let Some(r) = relaxed else {
        return Outcome::Infeasible;
    };
    let bound = node.lower_bound.max(r.lower_bound);
    let ps = r.ps();
    let sched = round_schedule(problem, &ps, &node.domains);
    let integral = ps.iter().all(|p| (p - p.round()).abs() <= 1e-6);
    if problem.admissible(&sched) {
        leaves.evaluate(&sched, Some(&r.x), inc);
    }
    if integral || bound >= inc.value() - opts.gap {
        return Outcome::Pruned { bound };
    }
    // Most fractional pit code; ties go to the earliest lap.
    let (k, frac) = ps
        .iter()
        .enumerate()
        .filter(|(i, _)| node.domains[*i][0] < node.domains[*i][1])
        .map(|(i, p)| (i, (p - p.round()).abs()))
        .fold((usize::MAX, -1.0), |acc, (i, f)| if f > acc.1 { (i, f) } else { acc });
    if k == usize::MAX || frac <= 1e-6 {
        return Outcome::Pruned { bound };
    }
    let p = ps[k];
    let mut lo = node.domains.clone();
    lo[k][1] = p.floor() as u8;
    let mut hi = node.domains.clone();
    hi[k][0] = p.ceil() as u8;
    let child = |domains: Vec<PsDomain>, id: usize| BnBNode {
        id,
        parent: Some(node.id),
        depth: node.depth + 1,
        domains,
        lower_bound: bound,
        warm: Some(r.x.clone()),
    };
    let (first, second) = if p - p.floor() < 0.5 { (lo, hi) } else { (hi, lo) };
    let a = child(first, next_id());
    let b = child(second, next_id());
    Outcome::Branch { bound, children: [a, b] }
}

/// Branch-and-bound with a seed incumbent from the nominal-energy schedule
/// program and local search. Plunges into the child nearer the relaxed pit
/// code, otherwise expands the open node with the smallest bound.
pub fn branch_and_bound(problem: &OcpProblem, opts: &BnbOptions) -> Result<OcpSolution, OptimizeError> {
    branch_and_bound_observed(problem, opts, &|_| {})
}

/// Search state reported after every batch of processed nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnbProgress {
    pub nodes: usize,
    pub open: usize,
    pub incumbent: Option<f64>,
    /// Smallest bound over open and pruned nodes.
    pub lower_bound: f64,
    pub elapsed_s: f64,
}

/// Same as [`branch_and_bound`], calling `observe` as the search advances.
pub fn branch_and_bound_observed(problem: &OcpProblem, opts: &BnbOptions, observe: &(dyn Fn(&BnbProgress) + Sync)) -> Result<OcpSolution, OptimizeError> {
    let started = Instant::now();
    let owned;
    let problem = match opts.max_stops {
        Some(m) => {
            let mut space = problem.space;
            space.max_stops = m;
            owned = OcpProblem::from_state(&problem.cfg, space, problem.k0, problem.start, problem.stops_before, problem.last_stop)?;
            &owned
        }
        None => problem,
    };
    if problem.stop_budget() == 0 && problem.start.b_compound == 0 {
        return Err(OptimizeError::Infeasible("no stop is allowed and the race needs a compound change".into()));
    }
    let workers = if opts.deterministic {
        1
    } else if opts.workers == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        opts.workers
    };

    let inc = Incumbent::new();
    let leaves = Leaves::new(problem, &opts.nlp);
    let seeds = nominal_schedules(problem);
    let evaluate_all = |scheds: &[Vec<u8>]| {
        parallel_map(scheds, workers, |s| leaves.evaluate(s, None, &inc));
    };
    evaluate_all(&seeds.iter().map(|(_, s)| s.clone()).collect::<Vec<_>>());
    if opts.local_search {
        let mut center: Option<Vec<u8>> = None;
        loop {
            let cur = inc.best.lock().expect("incumbent lock").as_ref().map(|l| l.schedule.clone());
            let Some(cur) = cur else { break };
            if center.as_ref() == Some(&cur) {
                break;
            }
            evaluate_all(&neighbors(problem, &cur));
            center = Some(cur);
        }
    }

    let time_up = || opts.time_limit_s.is_some_and(|t| started.elapsed().as_secs_f64() > t);
    let mut next = 0usize;
    let mut next_id = || {
        next += 1;
        next
    };
    let root_warm = inc.best.lock().expect("incumbent lock").as_ref().map(|l| l.x.clone());
    let root = BnBNode { id: 0, parent: None, depth: 0, domains: problem.domains().to_vec(), lower_bound: f64::NEG_INFINITY, warm: root_warm };
    let mut heap = BinaryHeap::new();
    let mut dive: Option<BnBNode> = Some(root);
    let mut nodes = 0usize;
    let mut pruned_floor = f64::INFINITY;
    let mut tree = Vec::new();
    let mut timed_out = false;

    loop {
        let mut batch = Vec::with_capacity(workers);
        if let Some(d) = dive.take() {
            batch.push(d);
        }
        while batch.len() < workers {
            match heap.pop() {
                Some(Open(n)) => {
                    if n.lower_bound >= inc.value() - opts.gap {
                        pruned_floor = pruned_floor.min(n.lower_bound);
                        continue;
                    }
                    batch.push(n);
                }
                None => break,
            }
        }
        if batch.is_empty() {
            break;
        }
        if nodes >= opts.max_nodes {
            for n in batch {
                heap.push(Open(n));
            }
            break;
        }
        if time_up() {
            for n in batch {
                heap.push(Open(n));
            }
            timed_out = true;
            break;
        }
        nodes += batch.len();
        let ids: Vec<usize> = (0..batch.len() * 2).map(|_| next_id()).collect();
        let results = parallel_map_indexed(&batch, workers, |i, node| {
            let mut local = ids[2 * i..2 * i + 2].iter().copied();
            let mut take = || local.next().expect("two child ids");
            process(node, problem, opts, &leaves, &inc, &mut take)
        });
        for (node, outcome) in batch.into_iter().zip(results) {
            let bound = match &outcome {
                Outcome::Pruned { bound } | Outcome::Branch { bound, .. } => *bound,
                Outcome::Infeasible => f64::INFINITY,
            };
            if opts.record_tree {
                tree.push(NodeRecord { id: node.id, parent: node.parent, depth: node.depth, lower_bound: bound, domains: node.domains.clone() });
            }
            match outcome {
                Outcome::Infeasible => {}
                Outcome::Pruned { bound } => pruned_floor = pruned_floor.min(bound),
                Outcome::Branch { children: [near, far], .. } => {
                    heap.push(Open(far));
                    if let Some(prev) = dive.take() {
                        heap.push(Open(prev));
                    }
                    dive = Some(near);
                }
            }
        }
        if let Some(d) = &dive {
            if d.lower_bound >= inc.value() - opts.gap {
                pruned_floor = pruned_floor.min(d.lower_bound);
                dive = None;
            }
        }
        let incumbent = Some(inc.value()).filter(|v| v.is_finite());
        let open_floor = heap.iter().map(|o| o.0.lower_bound).chain(dive.iter().map(|d| d.lower_bound)).fold(f64::INFINITY, f64::min);
        observe(&BnbProgress {
            nodes,
            open: heap.len() + dive.iter().count(),
            incumbent,
            lower_bound: open_floor.min(pruned_floor).min(incumbent.unwrap_or(f64::INFINITY)),
            elapsed_s: started.elapsed().as_secs_f64(),
        });
    }

    let best = inc.best.into_inner().expect("incumbent lock");
    let Some(best) = best else {
        return Err(OptimizeError::Infeasible("no admissible pit schedule has a feasible energy allocation".into()));
    };
    let t_best = best.t_race();
    let open_floor = heap.iter().map(|o| o.0.lower_bound).chain(dive.iter().map(|d| d.lower_bound)).fold(f64::INFINITY, f64::min);
    let lower_bound = t_best.min(open_floor).min(pruned_floor);
    let gap = (t_best - lower_bound).max(0.0);
    let status = if gap <= opts.gap { SolveStatus::Optimal } else { SolveStatus::NodeLimit };
    let mut sol = OcpSolution::from_log(&best.log, status);
    sol.lower_bound = lower_bound;
    sol.gap = gap;
    sol.tree = tree;
    sol.stats = SolverStats {
        nodes,
        nlp_solves: leaves.solves.load(AtomicOrdering::Relaxed) as usize,
        nlp_iterations: leaves.iterations.load(AtomicOrdering::Relaxed) as usize,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    if timed_out {
        return Err(OptimizeError::Timeout { gap, incumbent: Box::new(sol) });
    }
    Ok(sol)
}

pub(crate) fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    parallel_map_indexed(items, workers, |_, x| f(x))
}

/// Maps `f` over `items` on up to `workers` scoped threads, keeping the input
/// order in the output.
pub(crate) fn parallel_map_indexed<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    if workers <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let f = &f;
                scope.spawn(move || part.iter().enumerate().map(|(i, x)| f(c * chunk + i, x)).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}
