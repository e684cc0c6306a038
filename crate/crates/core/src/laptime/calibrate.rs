//! Fits the free surrogate coefficients to reference lap times and a
//! soft/hard break-even age.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{nominal_map, recup_shift, LapKind, MapPoint};
use crate::compound::Compound;
use crate::config::{LapTimeParams, RaceConfig, TireParams};
use crate::error::CalibrationError;
use crate::model::wear_recursion;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub e_b: f64,
    pub de_b: f64,
    /// Fuel burn of the reference lap; the nominal burn when absent.
    #[serde(default)]
    pub de_f: Option<f64>,
    pub m_car: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub kind: LapKind,
    pub lap_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossoverTarget {
    /// Tire age (laps, may be fractional) at which cumulative soft and hard
    /// extra times are equal.
    pub breakeven_age: f64,
    /// Admissible range of the first integer age at which hard is ahead.
    pub window: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub reference: ReferencePoint,
    pub anchors: Vec<Anchor>,
    /// Empty-car lap time, held fixed.
    pub t0: f64,
    /// Fresh-tire offsets `d` per compound label.
    pub fresh_offsets: [f64; 3],
    /// Quadratic gains held fixed for medium and hard.
    pub medium_gain: f64,
    pub hard_gain: f64,
    pub crossover: CrossoverTarget,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        let cfg = RaceConfig::default();
        CalibrationTargets {
            reference: ReferencePoint { e_b: cfg.e_b_max, de_b: 0.0, de_f: None, m_car: cfg.m_car_init() },
            anchors: vec![
                Anchor { kind: LapKind::Normal, lap_time: 93.1 },
                Anchor { kind: LapKind::Inlap, lap_time: 104.6 },
                Anchor { kind: LapKind::Outlap, lap_time: 108.2 },
                Anchor { kind: LapKind::OutInlap, lap_time: 119.7 },
            ],
            t0: 90.0,
            fresh_offsets: [0.0, 0.6, 2.0],
            medium_gain: 15.0,
            hard_gain: 4.0,
            crossover: CrossoverTarget { breakeven_age: 18.0, window: [15, 21] },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub laptime: LapTimeParams,
    pub tires: TireParams,
    /// Anchor residuals (model minus target, s).
    pub residuals: Vec<f64>,
    pub crossover_age: usize,
}

/// Tire wear at ages `0..n` for a stint started at race start with the
/// nominal fuel burn.
fn stint_wear(cfg: &RaceConfig, tires: &TireParams, c: Compound, n: usize) -> Vec<f64> {
    let burn = cfg.m_f_race / cfg.n_laps as f64;
    let m0 = cfg.m_car_init();
    let mut tw = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(tw);
        let m = (m0 - burn * i as f64).max(cfg.m_empty);
        tw = wear_recursion(tw, m / m0, &tires.get(c).wear).min(1.0);
    }
    out
}

/// Cumulative correction time after `n` laps on compound `c`.
fn cumulative(cfg: &RaceConfig, tires: &TireParams, c: Compound, n: usize) -> f64 {
    let corr = tires.get(c).correction;
    stint_wear(cfg, tires, c, n).iter().map(|tw| corr.d + corr.e * tw * tw).sum()
}

/// First stint length after which the cumulative hard correction is smaller
/// than the soft one, searched up to `2 * n_laps`.
pub fn crossover_age(cfg: &RaceConfig, tires: &TireParams) -> Option<usize> {
    (1..=2 * cfg.n_laps).find(|&n| cumulative(cfg, tires, Compound::Hard, n) < cumulative(cfg, tires, Compound::Soft, n))
}

fn interp(f: impl Fn(usize) -> f64, age: f64) -> f64 {
    let n = age.floor() as usize;
    let fr = age - n as f64;
    f(n) * (1.0 - fr) + f(n + 1) * fr
}

/// Least-squares fit of `k_m` and the three pit offsets to the anchors, and a
/// closed-form fit of the soft quadratic gain to the break-even age. All other
/// coefficients come from `base`.
pub fn calibrate(targets: &CalibrationTargets, base: &RaceConfig) -> Result<CalibrationReport, CalibrationError> {
    let fail = |reason: &str, residuals: Vec<f64>| CalibrationError::Failure { reason: reason.to_string(), residuals };
    if targets.anchors.is_empty() {
        return Err(fail("no anchors", vec![]));
    }
    for kind in LapKind::ALL {
        if !targets.anchors.iter().any(|a| a.kind == kind) {
            return Err(fail(&format!("no anchor for {kind:?}"), vec![]));
        }
    }
    let ref_pt = &targets.reference;
    if !(targets.t0.is_finite() && targets.anchors.iter().all(|a| a.lap_time.is_finite())) {
        return Err(fail("non-finite targets", vec![]));
    }
    let mut params = base.laptime.clone();
    params.t0 = targets.t0;
    params.k_m = 1.0;
    let pt = MapPoint {
        e_b: ref_pt.e_b,
        de_b: ref_pt.de_b,
        de_f: ref_pt.de_f.unwrap_or_else(|| base.de_f_nom()),
        m_car: ref_pt.m_car,
    };
    let dm = ref_pt.m_car - base.m_empty;
    let rows = targets.anchors.len();
    let mut a = DMatrix::<f64>::zeros(rows, 4);
    let mut y = DVector::<f64>::zeros(rows);
    for (i, anchor) in targets.anchors.iter().enumerate() {
        // Everything except the mass term and the offset is fixed.
        let fixed = nominal_map(&pt, recup_shift(anchor.kind, &params), &params, base).value - dm;
        a[(i, 0)] = dm;
        match anchor.kind {
            LapKind::Normal => {}
            LapKind::Inlap => a[(i, 1)] = 1.0,
            LapKind::Outlap => a[(i, 2)] = 1.0,
            LapKind::OutInlap => a[(i, 3)] = 1.0,
        }
        y[i] = anchor.lap_time - fixed;
    }
    let svd = a.clone().svd(true, true);
    if svd.singular_values.iter().any(|&s| s < 1e-12) {
        return Err(fail("anchors do not determine the mass sensitivity", vec![]));
    }
    let theta = svd.solve(&y, 1e-14).map_err(|e| fail(e, vec![]))?;
    let residuals: Vec<f64> = (&a * &theta - &y).iter().copied().collect();
    params.k_m = theta[0];
    params.delta_in = theta[1];
    params.delta_out = theta[2];
    params.delta_outin = theta[3];
    if params.k_m <= 0.0 {
        return Err(fail("fitted mass sensitivity is not positive", residuals));
    }
    if params.delta_in < 0.0 || params.delta_out < 0.0 || params.delta_outin < 0.0 {
        return Err(fail("fitted pit offsets must be nonnegative", residuals));
    }
    if (params.delta_outin - params.delta_in - params.delta_out).abs() > 0.5 {
        return Err(fail("out-inlap offset is not close to inlap plus outlap", residuals));
    }
    if targets.reference.de_f.is_none() && residuals.iter().any(|r| r.abs() > 1e-9) {
        return Err(fail("anchor residual above 1e-9 s", residuals));
    }

    let mut tires = base.tires.clone();
    for c in Compound::ALL {
        tires.get_mut(c).correction.d = targets.fresh_offsets[c.index()];
    }
    tires.medium.correction.e = targets.medium_gain;
    tires.hard.correction.e = targets.hard_gain;
    let age = targets.crossover.breakeven_age;
    if !(age.is_finite() && age >= 1.0 && age < (2 * base.n_laps) as f64) {
        return Err(fail("break-even age out of range", residuals));
    }
    let hard = interp(|n| cumulative(base, &tires, Compound::Hard, n), age);
    let soft_fresh = interp(|n| targets.fresh_offsets[0] * n as f64, age);
    let soft_sq = interp(|n| stint_wear(base, &tires, Compound::Soft, n).iter().map(|t| t * t).sum(), age);
    if soft_sq <= 0.0 {
        return Err(fail("soft tire does not wear", residuals));
    }
    tires.soft.correction.e = (hard - soft_fresh) / soft_sq;
    if tires.soft.correction.e < 0.0 {
        return Err(fail("fitted soft gain is negative", residuals));
    }
    let crossover = crossover_age(base, &tires).ok_or_else(|| fail("hard never overtakes soft", residuals.clone()))?;
    let [lo, hi] = targets.crossover.window;
    if crossover < lo || crossover > hi {
        return Err(fail(&format!("crossover age {crossover} outside [{lo}, {hi}]"), residuals));
    }
    let mut check = base.clone();
    check.laptime = params.clone();
    check.tires = tires.clone();
    check.validate()?;
    Ok(CalibrationReport { laptime: params, tires, residuals, crossover_age: crossover })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DEFAULT_SOFT_GAIN;

    #[test]
    fn default_targets_reproduce_defaults() {
        let cfg = RaceConfig::default();
        let rep = calibrate(&CalibrationTargets::default(), &cfg).unwrap();
        assert!((rep.laptime.k_m - 0.031).abs() < 1e-12);
        assert!((rep.laptime.delta_in - 11.5).abs() < 1e-9);
        assert!((rep.laptime.delta_out - 15.1).abs() < 1e-9);
        assert!((rep.laptime.delta_outin - 26.6).abs() < 1e-9);
        assert!(rep.residuals.iter().all(|r| r.abs() < 1e-9));
        assert!((rep.tires.soft.correction.e - DEFAULT_SOFT_GAIN).abs() < 5e-5, "{}", rep.tires.soft.correction.e);
        assert!((15..=21).contains(&rep.crossover_age));
        assert_eq!(crossover_age(&cfg, &cfg.tires), Some(rep.crossover_age));
    }

    #[test]
    fn empty_targets_fail() {
        let targets = CalibrationTargets { anchors: vec![], ..CalibrationTargets::default() };
        assert!(calibrate(&targets, &RaceConfig::default()).is_err());
    }

    #[test]
    fn missing_kind_fails() {
        let mut targets = CalibrationTargets::default();
        targets.anchors.pop();
        assert!(calibrate(&targets, &RaceConfig::default()).is_err());
    }

    #[test]
    fn unreachable_window_fails() {
        let mut targets = CalibrationTargets::default();
        targets.crossover.window = [30, 40];
        let err = calibrate(&targets, &RaceConfig::default()).unwrap_err();
        assert!(matches!(err, CalibrationError::Failure { .. }));
    }

    #[test]
    fn targets_json_roundtrip() {
        let t = CalibrationTargets::default();
        let text = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<CalibrationTargets>(&text).unwrap(), t);
    }
}
