//! The race-strategy optimal control problem over laps `k0..n_laps` with the
//! reformulated dynamics, and its smooth relaxation for a given set of pit
//! domains.

use serde::{Deserialize, Serialize};

use super::nlp::{solve_al, ConstrainedProblem, NlpOptions, NlpResult};
use super::reform::{aux_bps, aux_bps_deriv, aux_z, selector_weights, selector_weights_deriv};
use crate::compound::PitAction;
use crate::config::RaceConfig;
use crate::error::{ConfigError, OptimizeError};
use crate::laptime::{nominal_map, MapPoint};
use crate::model::{simulate_from, ControlInput, EpisodeLog, RaceState};

/// Number of smooth state components: e_b, e_f, m_car, tc, b_compound, tw,
/// b_outlap.
pub const NS: usize = 7;
const EB: usize = 0;
const EF: usize = 1;
const M: usize = 2;
const TC: usize = 3;
const BC: usize = 4;
const TW: usize = 5;
const BO: usize = 6;

/// Per-lap bound constraints on the state after each lap.
const PER_LAP: usize = 6;

/// Closed integer interval of admissible pit codes on one lap.
pub type PsDomain = [u8; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub max_stops: usize,
    /// Minimum lap distance between two stops.
    pub min_gap: usize,
    pub allow_first_lap: bool,
    pub allow_last_lap: bool,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace { max_stops: 4, min_gap: 3, allow_first_lap: false, allow_last_lap: false }
    }
}

impl SearchSpace {
    /// Every lap may be a stop and stops may follow each other directly.
    pub fn unrestricted(max_stops: usize) -> Self {
        SearchSpace { max_stops, min_gap: 1, allow_first_lap: true, allow_last_lap: true }
    }

    pub fn from_config(cfg: &RaceConfig) -> Self {
        SearchSpace { max_stops: cfg.pit.max_stops, ..SearchSpace::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpProblem {
    pub cfg: RaceConfig,
    pub space: SearchSpace,
    /// First optimized lap.
    pub k0: usize,
    pub start: RaceState,
    /// Stops made before `k0`; they count against `space.max_stops`.
    pub stops_before: usize,
    pub last_stop: Option<usize>,
    domains: Vec<PsDomain>,
    windows: Vec<usize>,
}

/// Builds the full-race problem with the search space taken from `cfg.pit`.
pub fn build_ocp(cfg: &RaceConfig) -> Result<OcpProblem, ConfigError> {
    OcpProblem::new(cfg, SearchSpace::from_config(cfg))
}

impl OcpProblem {
    pub fn new(cfg: &RaceConfig, space: SearchSpace) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Self::from_state(cfg, space, 0, RaceState::initial(cfg), 0, None)
    }

    /// Problem over the remaining laps `k0..n_laps` from a mid-race state.
    pub fn from_state(
        cfg: &RaceConfig,
        space: SearchSpace,
        k0: usize,
        start: RaceState,
        stops_before: usize,
        last_stop: Option<usize>,
    ) -> Result<Self, ConfigError> {
        cfg.validate()?;
        if k0 >= cfg.n_laps {
            return Err(ConfigError::Invalid { field: "k0".into(), reason: format!("start lap {k0} is not before lap {}", cfg.n_laps) });
        }
        if space.min_gap == 0 {
            return Err(ConfigError::Invalid { field: "min_gap".into(), reason: "must be at least 1".into() });
        }
        let n = cfg.n_laps;
        let domains = (k0..n)
            .map(|k| {
                let closed = (k == 0 && !space.allow_first_lap)
                    || (k == n - 1 && !space.allow_last_lap)
                    || cfg.is_forbidden_lap(k)
                    || last_stop.is_some_and(|l| k < l + space.min_gap);
                if closed {
                    [0, 0]
                } else {
                    [0, 3]
                }
            })
            .collect::<Vec<PsDomain>>();
        let h = n - k0;
        let windows = if space.min_gap >= 2 && h >= space.min_gap {
            (0..=h - space.min_gap).filter(|&j| (j..j + space.min_gap).filter(|&i| domains[i][1] > 0).count() >= 2).collect()
        } else {
            Vec::new()
        };
        Ok(OcpProblem { cfg: cfg.clone(), space, k0, start, stops_before, last_stop, domains, windows })
    }

    pub fn horizon(&self) -> usize {
        self.cfg.n_laps - self.k0
    }

    pub fn n_vars(&self) -> usize {
        3 * self.horizon()
    }

    /// Base pit domains of every lap in the horizon.
    pub fn domains(&self) -> &[PsDomain] {
        &self.domains
    }

    /// Stops still allowed in the horizon.
    pub fn stop_budget(&self) -> usize {
        self.space.max_stops.saturating_sub(self.stops_before)
    }

    fn has_count(&self) -> bool {
        self.stop_budget() < self.horizon()
    }

    /// Decision-variable bounds for the given pit domains.
    pub fn bounds(&self, domains: &[PsDomain]) -> (Vec<f64>, Vec<f64>) {
        let cfg = &self.cfg;
        let mut lo = Vec::with_capacity(self.n_vars());
        let mut hi = Vec::with_capacity(self.n_vars());
        for d in domains {
            lo.extend([cfg.de_b_min, cfg.de_f_min(), d[0] as f64]);
            hi.extend([cfg.de_b_max, cfg.de_f_max(), d[1] as f64]);
        }
        (lo, hi)
    }

    pub fn start_vector(&self) -> [f64; NS] {
        let s = &self.start;
        [s.e_b, s.e_f, s.m_car, s.tc.code() as f64, s.b_compound as f64, s.tw, if s.b_outlap { 1.0 } else { 0.0 }]
    }

    /// Charge-depleting, fuel-exhausting inputs spread evenly over the horizon
    /// with the given pit codes.
    pub fn even_inputs(&self, ps: &[f64]) -> Vec<f64> {
        let h = self.horizon() as f64;
        let db = (-self.start.e_b / h).clamp(self.cfg.de_b_min, self.cfg.de_b_max);
        let df = (self.start.e_f / h).clamp(self.cfg.de_f_min(), self.cfg.de_f_max());
        ps.iter().flat_map(|&p| [db, df, p]).collect()
    }

    /// Smooth lap transition with its derivatives.
    pub fn lap(&self, s: &[f64; NS], u: [f64; 3]) -> LapLinearization {
        let cfg = &self.cfg;
        let lp = &cfg.laptime;
        let p = u[2];
        let b = aux_bps(p);
        let bp = aux_bps_deriv(p);
        let o = s[BO];
        let pt = MapPoint { e_b: s[EB], de_b: u[0], de_f: u[1], m_car: s[M] };
        let v0 = nominal_map(&pt, 0.0, lp, cfg);
        let v1 = nominal_map(&pt, lp.inlap_extra_recup, lp, cfg);
        let tc = s[TC];
        let tw = s[TW];
        let wts = selector_weights(aux_z(tc));
        let dwts = selector_weights_deriv(tc);
        let corr = cfg.tires.corrections();
        let wear = cfg.tires.wears();
        let m0 = cfg.m_car_init();

        let offsets = b * (1.0 - o) * lp.delta_in + (1.0 - b) * o * lp.delta_out + b * o * lp.delta_outin;
        let mut t = (1.0 - b) * v0.value + b * v1.value + offsets;
        let mut dt_s = [0.0; NS];
        let mut dt_u = [0.0; 3];
        dt_s[EB] = (1.0 - b) * v0.grad[0] + b * v1.grad[0];
        dt_u[0] = (1.0 - b) * v0.grad[1] + b * v1.grad[1];
        dt_u[1] = (1.0 - b) * v0.grad[2] + b * v1.grad[2];
        dt_s[M] = (1.0 - b) * v0.grad[3] + b * v1.grad[3];
        dt_u[2] = bp * (v1.value - v0.value + (1.0 - o) * lp.delta_in - o * lp.delta_out + o * lp.delta_outin);
        dt_s[BO] = -b * lp.delta_in + (1.0 - b) * lp.delta_out + b * lp.delta_outin;
        for j in 0..3 {
            let dtj = corr[j].d + corr[j].e * tw * tw;
            t += wts[j] * dtj;
            dt_s[TC] += dwts[j] * dtj;
            dt_s[TW] += wts[j] * 2.0 * corr[j].e * tw;
        }

        let ratio = s[M] / m0;
        let mut fsum = 0.0;
        let mut f_tw = 0.0;
        let mut f_m = 0.0;
        let mut f_tc = 0.0;
        for j in 0..3 {
            let fj = wear[j].a * tw + wear[j].b * ratio + wear[j].c;
            fsum += wts[j] * fj;
            f_tw += wts[j] * wear[j].a;
            f_m += wts[j] * wear[j].b / m0;
            f_tc += dwts[j] * fj;
        }

        let mut next = *s;
        next[EB] = s[EB] + u[0];
        next[EF] = s[EF] - u[1];
        next[M] = s[M] - u[1] / cfg.h_lhv;
        next[TC] = tc * (1.0 - b) + p;
        next[BC] = s[BC] + (p - tc) * (p - tc) * b;
        next[TW] = (1.0 - b) * fsum;
        next[BO] = b;

        let mut js = [[0.0; NS]; NS];
        let mut ju = [[0.0; 3]; NS];
        js[EB][EB] = 1.0;
        ju[EB][0] = 1.0;
        js[EF][EF] = 1.0;
        ju[EF][1] = -1.0;
        js[M][M] = 1.0;
        ju[M][1] = -1.0 / cfg.h_lhv;
        js[TC][TC] = 1.0 - b;
        ju[TC][2] = 1.0 - tc * bp;
        js[BC][BC] = 1.0;
        js[BC][TC] = -2.0 * (p - tc) * b;
        ju[BC][2] = 2.0 * (p - tc) * b + (p - tc) * (p - tc) * bp;
        js[TW][TW] = (1.0 - b) * f_tw;
        js[TW][M] = (1.0 - b) * f_m;
        js[TW][TC] = (1.0 - b) * f_tc;
        ju[TW][2] = -bp * fsum;
        ju[BO][2] = bp;

        LapLinearization { next, t, b, bp, dt_s, dt_u, js, ju }
    }

    /// Smooth rollout: states at the start of every lap plus the final state,
    /// and the lap times.
    pub fn rollout(&self, x: &[f64]) -> (Vec<[f64; NS]>, Vec<f64>) {
        let h = self.horizon();
        let mut states = Vec::with_capacity(h + 1);
        let mut times = Vec::with_capacity(h);
        let mut s = self.start_vector();
        states.push(s);
        for i in 0..h {
            let lin = self.lap(&s, [x[3 * i], x[3 * i + 1], x[3 * i + 2]]);
            times.push(lin.t);
            s = lin.next;
            states.push(s);
        }
        (states, times)
    }

    fn constraint_values(&self, states: &[[f64; NS]], x: &[f64], g: &mut [f64]) {
        let cfg = &self.cfg;
        let h = self.horizon();
        let m0 = cfg.m_car_init();
        for i in 0..h {
            let s = &states[i + 1];
            let c = &mut g[PER_LAP * i..PER_LAP * (i + 1)];
            c[0] = -s[EB];
            c[1] = s[EB] - cfg.e_b_max;
            c[2] = -s[EF];
            c[3] = cfg.m_empty - s[M];
            c[4] = s[M] - m0;
            c[5] = s[TW] - 1.0;
        }
        let mut idx = PER_LAP * h;
        g[idx] = 1.0 - states[h][BC];
        idx += 1;
        let b: Vec<f64> = (0..h).map(|i| aux_bps(x[3 * i + 2])).collect();
        if self.has_count() {
            g[idx] = b.iter().sum::<f64>() - self.stop_budget() as f64;
            idx += 1;
        }
        for &j in &self.windows {
            g[idx] = b[j..j + self.space.min_gap].iter().sum::<f64>() - 1.0;
            idx += 1;
        }
    }

    /// Pit codes of a decision vector.
    pub fn ps_of(x: &[f64]) -> Vec<f64> {
        x.chunks(3).map(|c| c[2]).collect()
    }

    /// True when `sched` respects the pit domains, spacing, stop budget and
    /// ends the race on a second compound.
    pub fn admissible(&self, sched: &[u8]) -> bool {
        if sched.len() != self.horizon() || sched.iter().zip(&self.domains).any(|(&p, d)| p < d[0] || p > d[1]) {
            return false;
        }
        let stops: Vec<usize> = (0..sched.len()).filter(|&i| sched[i] > 0).collect();
        if stops.len() > self.stop_budget() || stops.windows(2).any(|w| w[1] - w[0] < self.space.min_gap) {
            return false;
        }
        let mut tc = self.start.tc;
        let mut changed = self.start.b_compound >= 1;
        for &p in sched {
            if let Some(c) = PitAction::new(p).and_then(|a| a.target()) {
                changed |= c != tc;
                tc = c;
            }
        }
        changed
    }

    /// Snaps a decision vector to integral pit codes and to the energy bounds
    /// so the strict simulator accepts it: the battery is kept within its
    /// bounds and emptied on the last lap, and the fuel residual is spread
    /// backwards over the laps with slack.
    pub fn repair(&self, x: &[f64], sched: &[u8]) -> Vec<ControlInput> {
        let cfg = &self.cfg;
        let h = self.horizon();
        let mut db: Vec<f64> = (0..h).map(|i| x[3 * i].clamp(cfg.de_b_min, cfg.de_b_max)).collect();
        let mut df: Vec<f64> = (0..h).map(|i| x[3 * i + 1].clamp(cfg.de_f_min(), cfg.de_f_max())).collect();
        let mut eb = self.start.e_b;
        for (i, d) in db.iter_mut().enumerate() {
            if i + 1 == h {
                *d = (-eb).clamp(cfg.de_b_min, cfg.de_b_max);
            } else {
                *d = d.clamp(-eb, cfg.e_b_max - eb);
            }
            eb += *d;
        }
        let mut residual = self.start.e_f - df.iter().sum::<f64>();
        for d in df.iter_mut().rev() {
            if residual.abs() == 0.0 {
                break;
            }
            let new = (*d + residual).clamp(cfg.de_f_min(), cfg.de_f_max());
            residual -= new - *d;
            *d = new;
        }
        (0..h)
            .map(|i| ControlInput::new(db[i], df[i], PitAction::new(sched[i].min(3)).unwrap_or(PitAction::STAY)))
            .collect()
    }

    /// Strict simulation of a repaired input sequence.
    pub fn simulate(&self, inputs: &[ControlInput]) -> Result<EpisodeLog, OptimizeError> {
        Ok(simulate_from(&self.cfg, self.start, self.k0, inputs)?)
    }

    /// Smooth problem; pit domains enter through [`OcpProblem::bounds`].
    pub fn relaxation(&self) -> Relaxation<'_> {
        Relaxation { problem: self }
    }
}

/// One lap of the smooth dynamics linearized around `(s, u)`.
#[derive(Debug, Clone, Copy)]
pub struct LapLinearization {
    pub next: [f64; NS],
    pub t: f64,
    pub b: f64,
    pub bp: f64,
    pub dt_s: [f64; NS],
    pub dt_u: [f64; 3],
    /// `js[r][c]` is the derivative of next-state component `r` in state `c`.
    pub js: [[f64; NS]; NS],
    pub ju: [[f64; 3]; NS],
}

/// The smooth NLP of one node.
pub struct Relaxation<'a> {
    problem: &'a OcpProblem,
}

impl ConstrainedProblem for Relaxation<'_> {
    fn dim(&self) -> usize {
        self.problem.n_vars()
    }

    fn n_constraints(&self) -> usize {
        let p = self.problem;
        PER_LAP * p.horizon() + 1 + usize::from(p.has_count()) + p.windows.len()
    }

    fn eval(&self, x: &[f64], g: &mut [f64]) -> f64 {
        let (states, times) = self.problem.rollout(x);
        self.problem.constraint_values(&states, x, g);
        self.problem.start.t_race + times.iter().sum::<f64>()
    }

    fn grad(&self, x: &[f64], w: &[f64], grad: &mut [f64]) {
        let p = self.problem;
        let h = p.horizon();
        let mut lins = Vec::with_capacity(h);
        let mut s = p.start_vector();
        for i in 0..h {
            let lin = p.lap(&s, [x[3 * i], x[3 * i + 1], x[3 * i + 2]]);
            s = lin.next;
            lins.push(lin);
        }
        // Weights on every b_ps from the stop-count and spacing constraints.
        let mut q = vec![0.0; h];
        let mut idx = PER_LAP * h + 1;
        if p.has_count() {
            q.iter_mut().for_each(|v| *v += w[idx]);
            idx += 1;
        }
        for &j in &p.windows {
            for v in &mut q[j..j + p.space.min_gap] {
                *v += w[idx];
            }
            idx += 1;
        }
        let mut lam = [0.0; NS];
        lam[BC] = -w[PER_LAP * h];
        for i in (0..h).rev() {
            let c = &w[PER_LAP * i..PER_LAP * (i + 1)];
            lam[EB] += c[1] - c[0];
            lam[EF] -= c[2];
            lam[M] += c[4] - c[3];
            lam[TW] += c[5];
            let lin = &lins[i];
            let mut gu = lin.dt_u;
            gu[2] += q[i] * lin.bp;
            for r in 0..NS {
                if lam[r] != 0.0 {
                    for (cidx, g) in gu.iter_mut().enumerate() {
                        *g += lin.ju[r][cidx] * lam[r];
                    }
                }
            }
            grad[3 * i..3 * i + 3].copy_from_slice(&gu);
            let mut prev = lin.dt_s;
            for r in 0..NS {
                if lam[r] != 0.0 {
                    for (cidx, v) in prev.iter_mut().enumerate() {
                        *v += lin.js[r][cidx] * lam[r];
                    }
                }
            }
            lam = prev;
        }
    }
}

/// Result of one node relaxation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedSolution {
    pub x: Vec<f64>,
    /// Relaxed objective; a bound on every integer completion of the domains.
    pub lower_bound: f64,
    pub violation: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl RelaxedSolution {
    fn from_nlp(r: NlpResult) -> Self {
        RelaxedSolution {
            x: r.x,
            lower_bound: r.objective,
            violation: r.violation,
            stationarity: r.stationarity,
            iterations: r.iterations,
            converged: r.converged,
        }
    }

    pub fn ps(&self) -> Vec<f64> {
        OcpProblem::ps_of(&self.x)
    }
}

/// Solves the relaxation over `domains`, starting from `x0` (projected onto
/// the box) or from evenly spread inputs with the lower pit codes.
pub fn solve_nlp(
    problem: &OcpProblem,
    domains: &[PsDomain],
    x0: Option<&[f64]>,
    opts: &NlpOptions,
) -> Result<RelaxedSolution, OptimizeError> {
    assert_eq!(domains.len(), problem.horizon(), "one pit domain per lap");
    let (lo, hi) = problem.bounds(domains);
    let start = match x0 {
        Some(x) => x.to_vec(),
        None => problem.even_inputs(&domains.iter().map(|d| d[0] as f64).collect::<Vec<_>>()),
    };
    let relax = problem.relaxation();
    solve_al(&relax, &start, &lo, &hi, opts).map(RelaxedSolution::from_nlp)
}

/// Like [`solve_nlp`] but an unconverged solve is returned as a best iterate
/// when it is feasible within `feas_tol`, and reported as `None` when it is
/// not.
pub(crate) fn solve_node(
    problem: &OcpProblem,
    domains: &[PsDomain],
    x0: Option<&[f64]>,
    opts: &NlpOptions,
    feas_tol: f64,
) -> (Option<RelaxedSolution>, usize) {
    match solve_nlp(problem, domains, x0, opts) {
        Ok(r) => {
            let it = r.iterations;
            (Some(r), it)
        }
        Err(OptimizeError::NlpDiverged { iterations, violation, stationarity, best }) => {
            if violation > feas_tol {
                return (None, iterations);
            }
            let relax = problem.relaxation();
            let mut g = vec![0.0; relax.n_constraints()];
            let f = relax.eval(&best, &mut g);
            let r = RelaxedSolution { x: best, lower_bound: f, violation, stationarity, iterations, converged: false };
            (Some(r), iterations)
        }
        Err(_) => (None, 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn variable_counts() {
        assert_eq!(build_ocp(&RaceConfig::default()).unwrap().n_vars(), 171);
        assert_eq!(build_ocp(&RaceConfig::with_laps(10)).unwrap().n_vars(), 30);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = RaceConfig::default();
        cfg.tires.soft.wear.a = f64::NAN;
        assert!(build_ocp(&cfg).is_err());
    }

    #[test]
    fn default_domains_close_first_and_last_lap() {
        let p = build_ocp(&RaceConfig::with_laps(10)).unwrap();
        assert_eq!(p.domains()[0], [0, 0]);
        assert_eq!(p.domains()[9], [0, 0]);
        assert_eq!(p.domains()[4], [0, 3]);
        let mut cfg = RaceConfig::with_laps(10);
        cfg.pit.forbidden_laps = vec![5];
        let p = build_ocp(&cfg).unwrap();
        assert_eq!(p.domains()[5], [0, 0]);
        let mid = OcpProblem::from_state(&cfg, SearchSpace::default(), 4, RaceState::initial(&cfg), 1, Some(3)).unwrap();
        assert_eq!(mid.horizon(), 6);
        assert_eq!(mid.domains()[..2], [[0, 0], [0, 0]]);
        assert_eq!(mid.stop_budget(), 3);
    }

    #[test]
    fn integer_rollout_matches_simulator() {
        let cfg = RaceConfig::with_laps(12);
        let p = OcpProblem::new(&cfg, SearchSpace::unrestricted(12)).unwrap();
        let sched = [0u8, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0, 0];
        let mut x = p.even_inputs(&sched.iter().map(|&c| c as f64).collect::<Vec<_>>());
        x[0] = -1.0;
        x[3] = 0.5;
        let inputs = p.repair(&x, &sched);
        let x: Vec<f64> = inputs.iter().flat_map(|i| [i.de_b, i.de_f, i.ps.code() as f64]).collect();
        let (states, _) = p.rollout(&x);
        let log = p.simulate(&inputs).unwrap();
        let relax = p.relaxation();
        let mut g = vec![0.0; relax.n_constraints()];
        let f = relax.eval(&x, &mut g);
        assert!((f - log.t_race).abs() < 1e-9, "{f} {}", log.t_race);
        for (s, r) in states.iter().zip(log.states()) {
            assert!((s[TW] - r.tw).abs() < 1e-12);
            assert_eq!(s[TC], r.tc.code() as f64);
            assert_eq!(s[BC] >= 1.0, r.b_compound >= 1);
        }
        assert!(g.iter().all(|&v| v <= 1e-9));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = RaceConfig::with_laps(8);
        let p = OcpProblem::new(&cfg, SearchSpace { max_stops: 2, min_gap: 2, allow_first_lap: true, allow_last_lap: true }).unwrap();
        let relax = p.relaxation();
        let (lo, hi) = p.bounds(p.domains());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let nc = relax.n_constraints();
        let mut g = vec![0.0; nc];
        for _ in 0..50 {
            let x: Vec<f64> = lo.iter().zip(&hi).map(|(&l, &u)| rng.random_range(l..=u)).collect();
            let w: Vec<f64> = (0..nc).map(|_| if rng.random_bool(0.5) { rng.random_range(0.0..3.0) } else { 0.0 }).collect();
            let mut grad = vec![0.0; x.len()];
            relax.grad(&x, &w, &mut grad);
            let lag = |xv: &[f64], g: &mut [f64]| {
                let f = relax.eval(xv, g);
                f + g.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
            };
            for i in 0..x.len() {
                let step = 1e-6 * (1.0 + x[i].abs());
                let mut xp = x.clone();
                xp[i] += step;
                let mut xm = x.clone();
                xm[i] -= step;
                let fd = (lag(&xp, &mut g) - lag(&xm, &mut g)) / (2.0 * step);
                let rel = (fd - grad[i]).abs() / (1.0 + grad[i].abs());
                assert!(rel < 1e-5, "var {i}: fd {fd} analytic {}", grad[i]);
            }
        }
    }

    #[test]
    fn fixed_schedule_matches_simulation() {
        let cfg = RaceConfig::with_laps(10);
        let p = build_ocp(&cfg).unwrap();
        let sched = [0u8, 0, 0, 0, 1, 0, 0, 0, 0, 0];
        let dom: Vec<PsDomain> = sched.iter().map(|&c| [c, c]).collect();
        let r = solve_nlp(&p, &dom, None, &NlpOptions::default()).unwrap();
        assert!(r.converged && r.violation <= 1e-8);
        let log = p.simulate(&p.repair(&r.x, &sched)).unwrap();
        assert!((log.t_race - r.lower_bound).abs() < 1e-6, "{} {}", log.t_race, r.lower_bound);
        assert!(log.final_state.e_b.abs() < 1e-6 && log.final_state.e_f.abs() < 1e-6);
    }

    #[test]
    fn no_stop_schedule_is_infeasible() {
        let cfg = RaceConfig::with_laps(10);
        let p = build_ocp(&cfg).unwrap();
        let dom = vec![[0u8, 0u8]; 10];
        match solve_nlp(&p, &dom, None, &NlpOptions::default()) {
            Err(OptimizeError::NlpDiverged { violation, .. }) => assert!((violation - 1.0).abs() < 1e-12),
            other => panic!("expected infeasibility, got {other:?}"),
        }
        assert!(!p.admissible(&[0; 10]));
    }

    #[test]
    fn admissibility_rules() {
        let p = build_ocp(&RaceConfig::with_laps(10)).unwrap();
        assert!(p.admissible(&[0, 0, 0, 1, 0, 0, 0, 0, 0, 0]));
        assert!(!p.admissible(&[0, 0, 0, 2, 0, 0, 0, 0, 0, 0]));
        assert!(!p.admissible(&[1, 0, 0, 0, 0, 0, 0, 0, 0, 0]));
        assert!(!p.admissible(&[0, 0, 1, 3, 0, 0, 0, 0, 0, 0]));
        assert!(p.admissible(&[0, 0, 2, 0, 0, 3, 0, 0, 0, 0]));
    }
}
