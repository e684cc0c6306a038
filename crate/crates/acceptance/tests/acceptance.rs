//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Criteria 4, 5 and 10 need `checkpoints/sac_57.json`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use racestrat::agent::{evaluate, load_checkpoint, PolicyParams};
use racestrat::bench::{default_disturbance, run_disturbance, solve_nominal, BenchOptions, HEURISTIC, MINLP, RL};
use racestrat::env::{reset, AgentAction, RaceEnv, ScenarioSpec};
use racestrat::laptime::{crossover_age, lap_kind, nominal_lap_time, nominal_map, tire_correction, LapKind, MapPoint};
use racestrat::minlp::{
    aux_bps, branch_and_bound, exhaustive_oracle, smooth_bcomp_update, smooth_dt, smooth_tc_update, smooth_tnom, smooth_tw_update, BnbOptions, ConstrainedProblem,
    OcpProblem, OcpSolution, SearchSpace,
};
use racestrat::model::{simulate_from, step, ControlInput, RaceState, StepMode};
use racestrat::{Compound, PitAction, RaceConfig};
use racestrat_service::{router, AppState, LogRecord, StepResponse};
use serde_json::Value;
use tower::ServiceExt;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(limit_s: f64, t0: Instant) -> Result<f64, String> {
    let s = t0.elapsed().as_secs_f64();
    ensure!(s < limit_s, "took {s:.2} s, limit {limit_s} s");
    Ok(s)
}

struct Shared {
    plan: Option<OcpSolution>,
    policy: Option<PolicyParams>,
}

impl Shared {
    fn plan(&mut self) -> Result<&OcpSolution, String> {
        if self.plan.is_none() {
            let p = solve_nominal(&RaceConfig::default(), &BenchOptions::default()).map_err(|e| e.to_string())?;
            self.plan = Some(p);
        }
        Ok(self.plan.as_ref().unwrap())
    }

    fn policy(&mut self) -> Result<&PolicyParams, String> {
        if self.policy.is_none() {
            let path = racestrat_acceptance::default_checkpoint();
            let (p, _) = load_checkpoint(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            self.policy = Some(p);
        }
        Ok(self.policy.as_ref().unwrap())
    }
}

fn reference_point(cfg: &RaceConfig) -> MapPoint {
    MapPoint { e_b: cfg.e_b_max, de_b: 0.0, de_f: cfg.de_f_nom(), m_car: cfg.m_car_init() }
}

fn c1_calibration(_: &mut Shared) -> Check {
    let t0 = Instant::now();
    let cfg = RaceConfig::default();
    let pt = reference_point(&cfg);
    let mut got = Vec::new();
    for (kind, want) in LapKind::ALL.into_iter().zip([93.1, 104.6, 108.2, 119.7]) {
        let t = nominal_lap_time(&pt, kind, &cfg.laptime, &cfg);
        ensure!((t - want).abs() <= 1e-6, "{kind:?}: {t} vs {want}");
        got.push(format!("{t:.6}"));
    }
    let s = within(1.0, t0)?;
    Ok(format!("{} s in {s:.3} s", got.join(" / ")))
}

fn c2_reformulation(_: &mut Shared) -> Check {
    let t0 = Instant::now();
    let cfg = RaceConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let tc = Compound::ALL[rng.random_range(0..3)];
        let ps = PitAction::new(rng.random_range(0..=3)).unwrap();
        let state = RaceState {
            e_b: rng.random_range(0.0..=cfg.e_b_max),
            e_f: cfg.e_f_init(),
            m_car: rng.random_range(cfg.m_empty..=cfg.m_car_init()),
            t_race: 0.0,
            b_compound: rng.random_range(0..=3),
            tc,
            tw: rng.random_range(0.0..=1.0),
            ta: rng.random_range(0..=30),
            b_outlap: rng.random_bool(0.5),
        };
        let lo = cfg.de_b_min.max(-state.e_b);
        let hi = cfg.de_b_max.min(cfg.e_b_max - state.e_b);
        let de_f = rng.random_range(0.9..=1.1) * cfg.de_f_nom();
        let state = RaceState { e_f: de_f + rng.random_range(0.0..100.0), m_car: state.m_car.max(cfg.m_empty + de_f / cfg.h_lhv), ..state };
        let input = ControlInput::new(rng.random_range(lo..=hi), de_f, ps);
        let (next, t_lap) = step(&state, &input, &cfg, StepMode::Strict).map_err(|e| format!("state {i}: {e}"))?;

        let (p, t) = (ps.code() as f64, tc.code() as f64);
        let b_ps = aux_bps(p);
        let tc_s = smooth_tc_update(t, p, b_ps);
        ensure!(tc_s == next.tc.code() as f64, "state {i}: compound {tc_s} vs {:?}", next.tc);
        let b_s = smooth_bcomp_update(state.b_compound as f64, t, p, b_ps);
        ensure!((b_s >= 1.0) == (next.b_compound >= 1), "state {i}: compound-change counter {b_s} vs {}", next.b_compound);
        let tw_s = smooth_tw_update(state.tw, state.m_car, t, b_ps, &cfg).min(1.0);
        worst = worst.max((tw_s - next.tw).abs());
        ensure!((tw_s - next.tw).abs() <= 1e-12, "state {i}: wear {tw_s} vs {}", next.tw);
        let pt = MapPoint { e_b: state.e_b, de_b: input.de_b, de_f, m_car: state.m_car };
        let maps = LapKind::ALL.map(|k| nominal_lap_time(&pt, k, &cfg.laptime, &cfg));
        let t_s = smooth_tnom(b_ps, if state.b_outlap { 1.0 } else { 0.0 }, maps) + smooth_dt(state.tw, t, &cfg.tires);
        worst = worst.max((t_s - t_lap).abs());
        ensure!((t_s - t_lap).abs() <= 1e-12, "state {i}: lap time {t_s} vs {t_lap} ({:?})", lap_kind(ps, state.b_outlap));
    }
    let s = within(10.0, t0)?;
    Ok(format!("10000 states, max deviation {worst:.1e} in {s:.2} s"))
}

fn c3_bnb_vs_oracle(_: &mut Shared) -> Check {
    let t0 = Instant::now();
    let cfg = RaceConfig::with_laps(10);
    let p = OcpProblem::new(&cfg, SearchSpace { max_stops: 2, ..SearchSpace::default() }).map_err(|e| e.to_string())?;
    let oracle = exhaustive_oracle(&p, 2).map_err(|e| e.to_string())?;
    let opts = BnbOptions { deterministic: true, gap: 1e-6, max_stops: Some(2), ..BnbOptions::default() };
    let bnb = branch_and_bound(&p, &opts).map_err(|e| e.to_string())?;
    ensure!(bnb.strategy == oracle.strategy, "strategy {} vs oracle {}", bnb.strategy, oracle.strategy);
    let d = (bnb.t_race - oracle.t_race).abs();
    ensure!(d <= 1e-4, "t_race {} vs oracle {}", bnb.t_race, oracle.t_race);
    let s = within(300.0, t0)?;
    Ok(format!("{} {:.4} s, |diff| {d:.1e} s, {s:.1} s", bnb.strategy, bnb.t_race))
}

fn c4_nominal(sh: &mut Shared) -> Check {
    let plan = sh.plan()?.clone();
    let policy = sh.policy()?;
    let stops = plan.stop_laps();
    ensure!(stops.len() == 2, "optimizer strategy {} is not 2-stop", plan.strategy);
    let t0 = Instant::now();
    let ev = evaluate(policy, &ScenarioSpec::nominal(RaceConfig::default()), Some(plan.t_race)).map_err(|e| e.to_string())?;
    let s = within(60.0, t0)?;
    let m = &ev.metrics;
    let dt = m.delta_t_race.unwrap();
    let rel = dt / plan.t_race;
    let detail = format!("{} {:.3} s vs {} {:.3} s, dT {dt:.3} s ({:.3}%)", m.strategy, m.t_race, plan.strategy, plan.t_race, 100.0 * rel);
    ensure!(rel <= 0.005, "{detail}");
    ensure!(m.stop_laps.len() == stops.len(), "{detail}: stop count differs");
    for (a, b) in m.stop_laps.iter().zip(&stops) {
        ensure!(a.abs_diff(*b) <= 3, "{detail}: stop lap {a} vs {b}");
    }
    Ok(format!("{detail}, eval {s:.3} s"))
}

fn c5_disturbance(sh: &mut Shared) -> Check {
    let cfg = RaceConfig::default();
    let plan = sh.plan()?.clone();
    let policy = sh.policy()?.clone();
    let t0 = Instant::now();
    let d = default_disturbance();
    let rep = run_disturbance(&cfg, d, &policy, Some(&plan), &BenchOptions::default()).map_err(|e| e.to_string())?;
    ensure!(rep.failures.is_empty(), "arm failures: {:?}", rep.failures);
    let arm = |n: &str| rep.arm(n).ok_or(format!("missing arm {n}"));
    let (m, r, h) = (arm(MINLP)?, arm(RL)?, arm(HEURISTIC)?);

    let nominal = simulate_from(&cfg, plan.states[0], 0, &plan.inputs).map_err(|e| e.to_string())?.rows();
    let own = evaluate(&policy, &ScenarioSpec::nominal(cfg.clone()), None).map_err(|e| e.to_string())?.log.rows();
    for k in 0..=d.lap {
        ensure!(m.laps[k] == nominal[k] && h.laps[k] == nominal[k], "optimizer arms differ from the nominal plan at lap {k}");
        ensure!(r.laps[k] == own[k], "agent differs from its nominal run at lap {k}");
    }
    ensure!(m.delta_t_race <= r.delta_t_race && r.delta_t_race < h.delta_t_race, "ordering: minlp {:.3}, rl {:.3}, heuristic {:.3}", m.delta_t_race, r.delta_t_race, h.delta_t_race);
    let after = |laps: &[usize]| laps.iter().copied().find(|&l| l > d.lap);
    let (Some(rs), Some(ms)) = (after(&r.stop_laps), after(&m.stop_laps)) else {
        return Err(format!("no post-disturbance stop: rl {}, minlp {}", r.strategy, m.strategy));
    };
    ensure!(rs.abs_diff(ms) <= 3, "post-disturbance stop {rs} vs re-solve {ms}");
    let s = within(600.0, t0)?;
    Ok(format!(
        "minlp {} 0.000, rl {} {:+.3}, go-long {} {:+.3} s; stops {rs} vs {ms}; {s:.1} s",
        m.strategy, r.strategy, r.delta_t_race, h.strategy, h.delta_t_race
    ))
}

fn c6_random_feasibility(_: &mut Shared) -> Check {
    let t0 = Instant::now();
    let cfg = RaceConfig::default();
    for seed in 0..1000u64 {
        let spec = if seed % 2 == 0 { ScenarioSpec::nominal(cfg.clone()) } else { ScenarioSpec::disturbed(cfg.clone()) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut env, _) = reset(spec).map_err(|e| e.to_string())?;
        while !env.is_done() {
            env.step(&AgentAction::random(&mut rng)).map_err(|e| format!("seed {seed}: {e}"))?;
        }
        let log = env.episode_log();
        for s in log.states() {
            s.check_bounds(&cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        }
        let end = log.final_state;
        ensure!(end.e_b.abs() <= 1e-9 && end.e_f.abs() <= 1e-9, "seed {seed}: terminal e_b {} e_f {}", end.e_b, end.e_f);
        ensure!(log.legal, "seed {seed}: no compound change");
    }
    let s = within(60.0, t0)?;
    Ok(format!("1000 episodes in {s:.2} s"))
}

fn c7_energy_exhaustion(sh: &mut Shared) -> Check {
    let plan = sh.plan()?;
    let end = plan.final_state();
    ensure!(end.e_b.abs() <= 1e-6 && end.e_f.abs() <= 1e-6, "final e_b {} e_f {}", end.e_b, end.e_f);
    Ok(format!("e_b {:.1e} MJ, e_f {:.1e} MJ", end.e_b, end.e_f))
}

fn c8_gradients(_: &mut Shared) -> Check {
    let mut cfg = RaceConfig::default();
    cfg.laptime.w_lo = 0.2;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for n in 0..50 {
        let x = [rng.random_range(0.0..4.0), rng.random_range(-4.0..2.0), rng.random_range(68.6..83.7), rng.random_range(800.0..898.0)];
        let r = if rng.random_bool(0.5) { cfg.laptime.inlap_extra_recup } else { 0.0 };
        let f = |x: [f64; 4]| nominal_map(&MapPoint::from_array(x), r, &cfg.laptime, &cfg);
        let ev = f(x);
        for i in 0..4 {
            let h = 1e-5 * (1.0 + x[i].abs());
            let (mut xp, mut xm) = (x, x);
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(xp).value - f(xm).value) / (2.0 * h);
            let err = (fd - ev.grad[i]).abs() / ev.grad[i].abs().max(1.0);
            worst = worst.max(err);
            ensure!(err < 1e-5, "lap-time map point {n}, d/dx{i}: analytic {} fd {fd}", ev.grad[i]);
        }
    }

    let cfg = RaceConfig::with_laps(8);
    let p = OcpProblem::new(&cfg, SearchSpace { max_stops: 2, min_gap: 2, allow_first_lap: true, allow_last_lap: true }).map_err(|e| e.to_string())?;
    let relax = p.relaxation();
    let (lo, hi) = p.bounds(p.domains());
    let nc = relax.n_constraints();
    let mut g = vec![0.0; nc];
    for n in 0..50 {
        let x: Vec<f64> = lo.iter().zip(&hi).map(|(&l, &u)| rng.random_range(l..=u)).collect();
        let w: Vec<f64> = (0..nc).map(|_| if rng.random_bool(0.5) { rng.random_range(0.0..3.0) } else { 0.0 }).collect();
        let mut grad = vec![0.0; x.len()];
        relax.grad(&x, &w, &mut grad);
        let mut lag = |xv: &[f64]| {
            let f = relax.eval(xv, &mut g);
            f + g.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        for i in 0..x.len() {
            let h = 1e-6 * (1.0 + x[i].abs());
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (lag(&xp) - lag(&xm)) / (2.0 * h);
            let err = (fd - grad[i]).abs() / (1.0 + grad[i].abs());
            worst = worst.max(err);
            ensure!(err < 1e-5, "objective point {n}, variable {i}: analytic {} fd {fd}", grad[i]);
        }
    }
    Ok(format!("50 + 50 points, worst relative error {worst:.1e}"))
}

/// Cumulative lap time of a stint started on fresh `tc` tires, per lap.
fn stint(cfg: &RaceConfig, tc: Compound, laps: usize) -> Result<Vec<f64>, String> {
    let mut s = RaceState { tc, ..RaceState::initial(cfg) };
    let mut out = Vec::with_capacity(laps);
    for _ in 0..laps {
        let (next, _) = step(&s, &ControlInput::nominal(cfg, PitAction::STAY), cfg, StepMode::Strict).map_err(|e| e.to_string())?;
        s = next;
        out.push(s.t_race);
    }
    Ok(out)
}

fn c9_tire_tradeoff(_: &mut Shared) -> Check {
    let cfg = RaceConfig::default();
    let soft = stint(&cfg, Compound::Soft, 40)?;
    let hard = stint(&cfg, Compound::Hard, 40)?;
    let age = (0..40).find(|&i| hard[i] < soft[i]).map(|i| i + 1).ok_or("hard never overtakes soft")?;
    ensure!((15..=21).contains(&age), "crossover at {age} laps");
    ensure!(crossover_age(&cfg, &cfg.tires) == Some(age), "calibrated crossover {:?} vs simulated {age}", crossover_age(&cfg, &cfg.tires));
    let (s0, h0) = (tire_correction(0.0, Compound::Soft, &cfg.tires), tire_correction(0.0, Compound::Hard, &cfg.tires));
    ensure!(s0 == 0.0 && h0 == 2.0, "fresh offsets soft {s0} hard {h0}");
    Ok(format!("crossover after {age} laps, fresh offsets {s0} / {h0} s"))
}

fn c10_inference(sh: &mut Shared) -> Check {
    let policy = sh.policy()?;
    let spec = ScenarioSpec::nominal(RaceConfig::default());
    let t0 = Instant::now();
    let ev = evaluate(policy, &spec, None).map_err(|e| e.to_string())?;
    let s = within(1.0, t0)?;
    Ok(format!("57 laps in {:.1} ms ({:.3} ms/lap inference)", s * 1e3, ev.metrics.inference_s_per_lap * 1e3))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Result<(StatusCode, Vec<u8>), String> {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .map_err(|e| e.to_string())?;
    let resp = app.clone().oneshot(req).await.map_err(|e| e.to_string())?;
    let status = resp.status();
    let bytes = resp.into_body().collect().await.map_err(|e| e.to_string())?.to_bytes().to_vec();
    Ok((status, bytes))
}

/// The service rejects actions outside the box instead of clipping them.
fn clip(a: AgentAction) -> AgentAction {
    AgentAction::new(a.f.clamp(0.0, 1.0), a.b.clamp(-1.0, 1.0), a.ps)
}

async fn golden_replay() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let app = router(AppState::open(dir.path(), None, 1).map_err(|e| e.to_string())?);
    let mut laps = 0;
    for seed in 0..5u64 {
        let spec = ScenarioSpec::disturbed(RaceConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actions: Vec<AgentAction> = (0..spec.cfg.n_laps).map(|_| clip(AgentAction::random(&mut rng))).collect();
        let mut env = RaceEnv::new(spec.clone()).map_err(|e| e.to_string())?;

        let (s, b) = call(&app, Method::POST, "/sessions", Some(serde_json::json!({ "spec": spec }))).await?;
        ensure!(s == StatusCode::CREATED, "create: {s}");
        let view: Value = serde_json::from_slice(&b).map_err(|e| e.to_string())?;
        let id = view["id"].as_str().ok_or("no session id")?.to_string();
        for a in &actions {
            let (s, b) = call(&app, Method::POST, &format!("/sessions/{id}/step"), Some(serde_json::to_value(a).unwrap())).await?;
            ensure!(s == StatusCode::OK, "step: {s}");
            let got: StepResponse = serde_json::from_slice(&b).map_err(|e| e.to_string())?;
            let want = env.step(a).map_err(|e| e.to_string())?;
            ensure!(got.result == want && &got.state == env.state(), "seed {seed}: lap {} differs", want.info.k);
            laps += 1;
        }
        let (_, b) = call(&app, Method::GET, &format!("/sessions/{id}/log"), None).await?;
        let records: Vec<LogRecord> = String::from_utf8_lossy(&b).lines().map(serde_json::from_str).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        ensure!(records.len() == actions.len(), "seed {seed}: {} log records", records.len());
        for (rec, info) in records.iter().zip(env.infos()) {
            let LogRecord::Step { result, .. } = rec else { return Err("unexpected disturbance record".into()) };
            ensure!(&result.info == info, "seed {seed}: logged lap {} differs", info.k);
        }
    }
    Ok(format!("5 races, {laps} laps identical"))
}

fn c11_golden_replay(_: &mut Shared) -> Check {
    tokio::runtime::Runtime::new().map_err(|e| e.to_string())?.block_on(async { tokio::time::timeout(Duration::from_secs(120), golden_replay()).await.map_err(|_| "timed out".to_string())? })
}

fn main() {
    let checks: [(&str, fn(&mut Shared) -> Check); 11] = [
        ("lap-time calibration", c1_calibration),
        ("reformulation equivalence", c2_reformulation),
        ("branch-and-bound vs exhaustive search", c3_bnb_vs_oracle),
        ("nominal benchmark", c4_nominal),
        ("disturbance benchmark", c5_disturbance),
        ("feasibility under random policies", c6_random_feasibility),
        ("energy exhaustion", c7_energy_exhaustion),
        ("gradient checks", c8_gradients),
        ("tire trade-off", c9_tire_tradeoff),
        ("inference latency", c10_inference),
        ("service golden replay", c11_golden_replay),
    ];
    let mut shared = Shared { plan: None, policy: None };
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        let out = catch_unwind(AssertUnwindSafe(|| f(&mut shared))).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match out {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
