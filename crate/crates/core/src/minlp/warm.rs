//! Stint-based dynamic program over pit schedules with the energy inputs held
//! at their nominal values. Used to seed the incumbent.

use super::ocp::OcpProblem;
use crate::compound::{Compound, PitAction};
use crate::laptime::{lap_kind, nominal_lap_time, tire_correction, MapPoint};
use crate::model::update_tire_wear;

struct StintTables {
    /// `inlap[c][a][e]`: stint on `c` over laps `a..=e` ending with a stop.
    inlap: Vec<Vec<Vec<f64>>>,
    /// `finish[c][a]`: stint on `c` from lap `a` to the flag.
    finish: Vec<Vec<f64>>,
    first_inlap: Vec<f64>,
    first_finish: f64,
}

fn stint_costs(p: &OcpProblem, tc: Compound, tw0: f64, outlap: bool, a: usize) -> (Vec<f64>, f64) {
    let cfg = &p.cfg;
    let h = p.horizon();
    let burn = p.start.e_f / h as f64;
    let m_at = |i: usize| p.start.m_car - burn * i as f64 / cfg.h_lhv;
    let mut inlap = vec![f64::INFINITY; h];
    let mut acc = 0.0;
    let mut tw = tw0;
    let m0 = cfg.m_car_init();
    for e in a..h {
        let pt = MapPoint { e_b: p.start.e_b, de_b: 0.0, de_f: burn, m_car: m_at(e) };
        let first = e == a && outlap;
        let corr = tire_correction(tw, tc, &cfg.tires);
        let stop = lap_kind(PitAction::pit_for(tc), first);
        let stay = lap_kind(PitAction::STAY, first);
        inlap[e] = acc + nominal_lap_time(&pt, stop, &cfg.laptime, cfg) + corr;
        acc += nominal_lap_time(&pt, stay, &cfg.laptime, cfg) + corr;
        tw = update_tire_wear(tw, m_at(e), m0, tc, PitAction::STAY, &cfg.tires);
    }
    (inlap, acc)
}

fn tables(p: &OcpProblem) -> StintTables {
    let h = p.horizon();
    let mut inlap = vec![vec![Vec::new(); h + 1]; 3];
    let mut finish = vec![vec![0.0; h + 1]; 3];
    for c in Compound::ALL {
        for a in 1..=h {
            let (i, f) = stint_costs(p, c, 0.0, true, a);
            inlap[c.index()][a] = i;
            finish[c.index()][a] = f;
        }
    }
    let (first_inlap, first_finish) = stint_costs(p, p.start.tc, p.start.tw, p.start.b_outlap, 0);
    StintTables { inlap, finish, first_inlap, first_finish }
}

/// Best schedule with exactly `stops` stops under nominal energy, with its
/// estimated race time.
fn best_with(p: &OcpProblem, t: &StintTables, stops: usize) -> Option<(f64, Vec<u8>)> {
    let h = p.horizon();
    let gap = p.space.min_gap;
    let open = |e: usize| p.domains()[e][1] > 0;
    // value[n][a][c][ch]: best cost of laps a.. given a stop at a-1 onto c,
    // n stops made so far and a compound change already made (ch).
    let idx = |n: usize, a: usize, c: usize, ch: usize| ((n * (h + 1) + a) * 3 + c) * 2 + ch;
    let mut value = vec![f64::INFINITY; (stops + 1) * (h + 1) * 3 * 2];
    let mut choice: Vec<Option<(usize, usize)>> = vec![None; value.len()];
    for n in (1..=stops).rev() {
        for a in (1..=h).rev() {
            for c in 0..3 {
                for ch in 0..2 {
                    let mut best = if n == stops && ch == 1 { t.finish[c][a] } else { f64::INFINITY };
                    let mut arg = None;
                    if n < stops {
                        for e in a..h {
                            if e + 1 < a + gap || !open(e) {
                                continue;
                            }
                            for c2 in 0..3 {
                                let ch2 = ch | usize::from(c2 != c);
                                let v = t.inlap[c][a][e] + value[idx(n + 1, e + 1, c2, ch2)];
                                if v < best {
                                    best = v;
                                    arg = Some((e, c2));
                                }
                            }
                        }
                    }
                    value[idx(n, a, c, ch)] = best;
                    choice[idx(n, a, c, ch)] = arg;
                }
            }
        }
    }
    let c0 = p.start.tc.index();
    let ch0 = usize::from(p.start.b_compound >= 1);
    let mut best = if stops == 0 && ch0 == 1 { t.first_finish } else { f64::INFINITY };
    let mut arg = None;
    if stops > 0 {
        for e in 0..h {
            if !open(e) {
                continue;
            }
            for c2 in 0..3 {
                let v = t.first_inlap[e] + value[idx(1, e + 1, c2, ch0 | usize::from(c2 != c0))];
                if v < best {
                    best = v;
                    arg = Some((e, c2));
                }
            }
        }
    }
    if !best.is_finite() {
        return None;
    }
    let mut sched = vec![0u8; h];
    let (mut n, mut cur) = (0, arg);
    let mut ch = ch0;
    let mut c_prev = c0;
    while let Some((e, c2)) = cur {
        sched[e] = Compound::ALL[c2].code();
        n += 1;
        ch |= usize::from(c2 != c_prev);
        c_prev = c2;
        cur = choice[idx(n, e + 1, c2, ch)];
    }
    Some((best + p.start.t_race, sched))
}

/// Best nominal-energy schedule for every admissible stop count.
pub fn nominal_schedules(p: &OcpProblem) -> Vec<(f64, Vec<u8>)> {
    let t = tables(p);
    let max = p.stop_budget().min(p.horizon());
    (0..=max).filter_map(|s| best_with(p, &t, s)).filter(|(_, s)| p.admissible(s)).collect()
}

/// Neighbors of a schedule: every stop moved by one lap or switched to another
/// compound, and every stop removed, restricted to admissible schedules.
pub fn neighbors(p: &OcpProblem, sched: &[u8]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let stops: Vec<usize> = (0..sched.len()).filter(|&i| sched[i] > 0).collect();
    for &k in &stops {
        for dk in [-1isize, 1] {
            let j = k as isize + dk;
            if j < 0 || j as usize >= sched.len() || sched[j as usize] > 0 {
                continue;
            }
            let mut s = sched.to_vec();
            s.swap(k, j as usize);
            out.push(s);
        }
        for c in 1..=3u8 {
            if c != sched[k] {
                let mut s = sched.to_vec();
                s[k] = c;
                out.push(s);
            }
        }
        let mut s = sched.to_vec();
        s[k] = 0;
        out.push(s);
    }
    out.retain(|s| p.admissible(s));
    out
}
