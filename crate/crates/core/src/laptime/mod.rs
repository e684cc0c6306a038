//! Analytic nominal lap-time surrogate and the tire correction term.
//!
//! The nominal map is built from smooth pieces so that it is twice
//! continuously differentiable in `(e_b, de_b, de_f, m_car)`:
//!
//! * mass: `k_m * (m_car - m_empty)`
//! * deployment: `-k_b * (D(r - de_b) - D(r))` with the saturating curve
//!   `D(x) = s * (1 - exp(-x / s))`; `r` is the extra recuperation available
//!   on laps that enter the pit lane and zero otherwise
//! * fuel: `-k_f * dl + c_f / 2 * dl^2` with `dl = de_f - de_f_nom`
//! * battery proximity: `w_hi * S(de_b / sigma) * e_b / E_max` and
//!   `w_lo * S(-de_b / sigma) * (1 - e_b / E_max)` where
//!   `S(x) = x^3 / (1 + x^2)` for `x > 0` and zero otherwise.
//!
//! Every energy term vanishes at charge-sustain with the nominal fuel burn, so
//! the reference lap times depend only on `t0`, `k_m` and the pit offsets.

mod calibrate;

pub use calibrate::{calibrate, crossover_age, Anchor, CalibrationReport, CalibrationTargets, CrossoverTarget, ReferencePoint};

use serde::{Deserialize, Serialize};

use crate::compound::{Compound, PitAction};
use crate::config::{LapTimeParams, RaceConfig, TireParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LapKind {
    Normal,
    Inlap,
    Outlap,
    OutInlap,
}

impl LapKind {
    pub const ALL: [LapKind; 4] = [LapKind::Normal, LapKind::Inlap, LapKind::Outlap, LapKind::OutInlap];

    pub fn enters_pit(self) -> bool {
        matches!(self, LapKind::Inlap | LapKind::OutInlap)
    }

    pub fn exits_pit(self) -> bool {
        matches!(self, LapKind::Outlap | LapKind::OutInlap)
    }
}

pub fn lap_kind(ps: PitAction, b_outlap: bool) -> LapKind {
    match (ps.is_stop(), b_outlap) {
        (false, false) => LapKind::Normal,
        (true, false) => LapKind::Inlap,
        (false, true) => LapKind::Outlap,
        (true, true) => LapKind::OutInlap,
    }
}

/// Argument of the nominal map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub e_b: f64,
    pub de_b: f64,
    pub de_f: f64,
    pub m_car: f64,
}

impl MapPoint {
    pub fn to_array(self) -> [f64; 4] {
        [self.e_b, self.de_b, self.de_f, self.m_car]
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        MapPoint { e_b: x[0], de_b: x[1], de_f: x[2], m_car: x[3] }
    }
}

/// Value, gradient and Hessian of the nominal map with respect to
/// `[e_b, de_b, de_f, m_car]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapEval {
    pub value: f64,
    pub grad: [f64; 4],
    pub hess: [[f64; 4]; 4],
}

pub fn kind_offset(kind: LapKind, p: &LapTimeParams) -> f64 {
    match kind {
        LapKind::Normal => 0.0,
        LapKind::Inlap => p.delta_in,
        LapKind::Outlap => p.delta_out,
        LapKind::OutInlap => p.delta_outin,
    }
}

pub fn recup_shift(kind: LapKind, p: &LapTimeParams) -> f64 {
    if kind.enters_pit() {
        p.inlap_extra_recup
    } else {
        0.0
    }
}

/// Smooth one-sided penalty shape and its first two derivatives.
fn penalty_shape(x: f64) -> (f64, f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let x2 = x * x;
    let q = 1.0 + x2;
    let s = x * x2 / q;
    let ds = (3.0 * x2 + x2 * x2) / (q * q);
    let d2s = (6.0 * x - 2.0 * x * x2) / (q * q * q);
    (s, ds, d2s)
}

/// Saturating deployment curve and its first two derivatives.
fn deploy_curve(x: f64, scale: f64) -> (f64, f64, f64) {
    let e = (-x / scale).exp();
    (scale * (1.0 - e), e, -e / scale)
}

/// Nominal map without the pit offset, evaluated with recuperation shift `r`.
pub fn nominal_map(pt: &MapPoint, r: f64, p: &LapTimeParams, cfg: &RaceConfig) -> MapEval {
    let mut grad = [0.0; 4];
    let mut hess = [[0.0; 4]; 4];

    let mass = p.k_m * (pt.m_car - cfg.m_empty);
    grad[3] = p.k_m;

    let (d_shift, _, _) = deploy_curve(r, p.deploy_scale);
    let (d_val, d1, d2) = deploy_curve(r - pt.de_b, p.deploy_scale);
    let deploy = -p.k_b * (d_val - d_shift);
    grad[1] += p.k_b * d1;
    hess[1][1] += -p.k_b * d2;

    let dl = pt.de_f - cfg.de_f_nom();
    let fuel = -p.k_f * dl + 0.5 * p.fuel_curvature * dl * dl;
    grad[2] = -p.k_f + p.fuel_curvature * dl;
    hess[2][2] = p.fuel_curvature;

    let soc = pt.e_b / cfg.e_b_max;
    let (sh, sh1, sh2) = penalty_shape(pt.de_b / p.sigma);
    let hi = p.w_hi * sh * soc;
    grad[0] += p.w_hi * sh / cfg.e_b_max;
    grad[1] += p.w_hi * sh1 / p.sigma * soc;
    hess[1][1] += p.w_hi * sh2 / (p.sigma * p.sigma) * soc;
    hess[0][1] += p.w_hi * sh1 / (p.sigma * cfg.e_b_max);

    let (sl, sl1, sl2) = penalty_shape(-pt.de_b / p.sigma);
    let lo = p.w_lo * sl * (1.0 - soc);
    grad[0] -= p.w_lo * sl / cfg.e_b_max;
    grad[1] -= p.w_lo * sl1 / p.sigma * (1.0 - soc);
    hess[1][1] += p.w_lo * sl2 / (p.sigma * p.sigma) * (1.0 - soc);
    hess[0][1] += p.w_lo * sl1 / (p.sigma * cfg.e_b_max);
    hess[1][0] = hess[0][1];

    MapEval { value: p.t0 + mass + deploy + fuel + hi + lo, grad, hess }
}

pub fn nominal_lap_time(pt: &MapPoint, kind: LapKind, p: &LapTimeParams, cfg: &RaceConfig) -> f64 {
    nominal_map(pt, recup_shift(kind, p), p, cfg).value + kind_offset(kind, p)
}

/// Extra lap time from tire wear on compound `tc`.
pub fn tire_correction(tw: f64, tc: Compound, p: &TireParams) -> f64 {
    let c = p.get(tc).correction;
    c.d + c.e * tw * tw
}

/// Derivative of [`tire_correction`] with respect to `tw`.
pub fn tire_correction_slope(tw: f64, tc: Compound, p: &TireParams) -> f64 {
    2.0 * p.get(tc).correction.e * tw
}
