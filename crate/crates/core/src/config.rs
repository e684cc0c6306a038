//! Race scenario configuration.
//!
//! Every field is in SI-ish race units: masses in kg, energies in MJ, times in
//! seconds. A [`RaceConfig`] round-trips through JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compound::Compound;
use crate::error::ConfigError;

/// Per-lap wear recursion `tw' = a*tw + b*(m/m0) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WearCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Lap-time correction `d + e*tw^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionCoefficients {
    /// Fresh-tire offset (s).
    pub d: f64,
    /// Quadratic gain (s).
    pub e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TireModel {
    pub wear: WearCoefficients,
    pub correction: CorrectionCoefficients,
}

/// Tire coefficients for all three compounds. All keys are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TireParams {
    #[serde(rename = "S")]
    pub soft: TireModel,
    #[serde(rename = "M")]
    pub medium: TireModel,
    #[serde(rename = "H")]
    pub hard: TireModel,
}

impl TireParams {
    pub fn get(&self, c: Compound) -> &TireModel {
        match c {
            Compound::Soft => &self.soft,
            Compound::Medium => &self.medium,
            Compound::Hard => &self.hard,
        }
    }

    pub fn get_mut(&mut self, c: Compound) -> &mut TireModel {
        match c {
            Compound::Soft => &mut self.soft,
            Compound::Medium => &mut self.medium,
            Compound::Hard => &mut self.hard,
        }
    }

    /// Correction coefficients in compound-code order.
    pub fn corrections(&self) -> [CorrectionCoefficients; 3] {
        [self.soft.correction, self.medium.correction, self.hard.correction]
    }

    pub fn wears(&self) -> [WearCoefficients; 3] {
        [self.soft.wear, self.medium.wear, self.hard.wear]
    }
}

impl Default for TireParams {
    fn default() -> Self {
        TireParams {
            soft: TireModel {
                wear: WearCoefficients { a: 1.05, b: 0.075, c: -0.057 },
                correction: CorrectionCoefficients { d: 0.0, e: DEFAULT_SOFT_GAIN },
            },
            medium: TireModel {
                wear: WearCoefficients { a: 1.04, b: 0.001, c: 0.011 },
                correction: CorrectionCoefficients { d: 0.6, e: 15.0 },
            },
            hard: TireModel {
                wear: WearCoefficients { a: 1.01, b: 0.002, c: 0.006 },
                correction: CorrectionCoefficients { d: 2.0, e: 4.0 },
            },
        }
    }
}

/// Soft quadratic gain produced by `calibrate` on the default targets,
/// rounded to four decimals.
pub const DEFAULT_SOFT_GAIN: f64 = 36.4184;

/// Coefficients of the analytic nominal lap-time surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapTimeParams {
    /// Lap time of the empty car at charge-sustain and nominal fuel (s).
    pub t0: f64,
    /// Mass sensitivity (s/kg).
    pub k_m: f64,
    /// Initial slope of the deployment benefit (s/MJ).
    pub k_b: f64,
    /// Saturation scale of the deployment benefit (MJ).
    pub deploy_scale: f64,
    /// Fuel-allocation benefit at the nominal burn (s/MJ).
    pub k_f: f64,
    /// Curvature of the fuel benefit (s/MJ^2).
    pub fuel_curvature: f64,
    pub delta_in: f64,
    pub delta_out: f64,
    pub delta_outin: f64,
    /// Penalty weight for deploying near an empty battery (s).
    pub w_lo: f64,
    /// Penalty weight for recharging near a full battery (s).
    pub w_hi: f64,
    /// Smoothness scale of both battery penalties (MJ).
    pub sigma: f64,
    /// Extra recuperation available on laps that enter the pit lane (MJ).
    pub inlap_extra_recup: f64,
}

impl Default for LapTimeParams {
    fn default() -> Self {
        LapTimeParams {
            t0: 90.0,
            k_m: 0.031,
            k_b: 0.3,
            deploy_scale: 1.5,
            k_f: 0.25,
            fuel_curvature: 0.02,
            delta_in: 11.5,
            delta_out: 15.1,
            delta_outin: 26.6,
            w_lo: 0.0,
            w_hi: 0.5,
            sigma: 0.25,
            inlap_extra_recup: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitLimits {
    /// Upper bound on the number of stops used by the optimizer.
    pub max_stops: usize,
    /// Laps on which no stop may be made.
    #[serde(default)]
    pub forbidden_laps: Vec<usize>,
}

impl Default for PitLimits {
    fn default() -> Self {
        PitLimits { max_stops: 4, forbidden_laps: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceConfig {
    pub n_laps: usize,
    pub m_empty: f64,
    pub m_f_race: f64,
    pub h_lhv: f64,
    pub e_b_max: f64,
    pub de_b_min: f64,
    pub de_b_max: f64,
    /// Fuel input box as fractions of the nominal burn.
    #[serde(default = "default_fuel_band")]
    pub de_f_band: [f64; 2],
    pub tc_init: Compound,
    pub tires: TireParams,
    #[serde(default)]
    pub laptime: LapTimeParams,
    #[serde(default)]
    pub pit: PitLimits,
}

fn default_fuel_band() -> [f64; 2] {
    [0.9, 1.1]
}

impl Default for RaceConfig {
    fn default() -> Self {
        RaceConfig {
            n_laps: 57,
            m_empty: 798.0,
            m_f_race: 100.0,
            h_lhv: 43.4,
            e_b_max: 4.0,
            de_b_min: -4.0,
            de_b_max: 2.0,
            de_f_band: default_fuel_band(),
            tc_init: Compound::Medium,
            tires: TireParams::default(),
            laptime: LapTimeParams::default(),
            pit: PitLimits::default(),
        }
    }
}

impl RaceConfig {
    /// Default scenario shortened to `n_laps`, fuel scaled so the nominal
    /// per-lap burn is unchanged.
    pub fn with_laps(n_laps: usize) -> Self {
        let base = RaceConfig::default();
        let m_f_race = base.m_f_race * n_laps as f64 / base.n_laps as f64;
        RaceConfig { n_laps, m_f_race, ..base }
    }

    pub fn de_f_nom(&self) -> f64 {
        self.m_f_race * self.h_lhv / self.n_laps as f64
    }

    pub fn de_f_min(&self) -> f64 {
        self.de_f_band[0] * self.de_f_nom()
    }

    pub fn de_f_max(&self) -> f64 {
        self.de_f_band[1] * self.de_f_nom()
    }

    /// Fuel energy on board at the start.
    pub fn e_f_init(&self) -> f64 {
        self.m_f_race * self.h_lhv
    }

    /// Car mass at the start.
    pub fn m_car_init(&self) -> f64 {
        self.m_empty + self.m_f_race
    }

    pub fn is_forbidden_lap(&self, k: usize) -> bool {
        self.pit.forbidden_laps.contains(&k)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, reason: &str| ConfigError::Invalid { field: field.to_string(), reason: reason.to_string() };
        if self.n_laps < 2 {
            return Err(bad("n_laps", "must be at least 2"));
        }
        for (name, v) in [
            ("m_empty", self.m_empty),
            ("m_f_race", self.m_f_race),
            ("h_lhv", self.h_lhv),
            ("e_b_max", self.e_b_max),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(bad(name, "must be finite and positive"));
            }
        }
        if !(self.de_b_min.is_finite() && self.de_b_min < 0.0) {
            return Err(bad("de_b_min", "must be finite and negative"));
        }
        if !(self.de_b_max.is_finite() && self.de_b_max > 0.0) {
            return Err(bad("de_b_max", "must be finite and positive"));
        }
        let [lo, hi] = self.de_f_band;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= 1.0 && hi >= 1.0) {
            return Err(bad("de_f_band", "needs 0 < lo <= 1 <= hi"));
        }
        for c in Compound::ALL {
            let t = self.tires.get(c);
            let field = format!("tires.{}", c.label());
            let w = t.wear;
            if ![w.a, w.b, w.c, t.correction.d, t.correction.e].iter().all(|v| v.is_finite()) {
                return Err(bad(&field, "coefficients must be finite"));
            }
            if w.a < 0.0 {
                return Err(bad(&field, "wear coefficient a must be nonnegative"));
            }
            // Wear of a fresh tire must not turn negative at any fuel load.
            let ratio = if w.b >= 0.0 { self.m_empty / self.m_car_init() } else { 1.0 };
            if w.b * ratio + w.c < 0.0 {
                return Err(bad(&field, "fresh-tire wear increment must be nonnegative"));
            }
            if t.correction.d < 0.0 || t.correction.e < 0.0 {
                return Err(bad(&field, "correction must be nonnegative, nondecreasing and convex"));
            }
        }
        let [ds, dm, dh] = self.tires.corrections().map(|c| c.d);
        if ds != 0.0 || dm < ds || dh < dm {
            return Err(bad("tires", "fresh offsets must satisfy 0 = d_S <= d_M <= d_H"));
        }
        let p = &self.laptime;
        let all = [
            p.t0,
            p.k_m,
            p.k_b,
            p.deploy_scale,
            p.k_f,
            p.fuel_curvature,
            p.delta_in,
            p.delta_out,
            p.delta_outin,
            p.w_lo,
            p.w_hi,
            p.sigma,
            p.inlap_extra_recup,
        ];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(bad("laptime", "coefficients must be finite"));
        }
        if p.k_m <= 0.0 || p.k_b <= 0.0 || p.k_f <= 0.0 {
            return Err(bad("laptime", "k_m, k_b and k_f must be positive"));
        }
        if p.deploy_scale <= 0.0 || p.sigma <= 0.0 {
            return Err(bad("laptime", "deploy_scale and sigma must be positive"));
        }
        if p.delta_in < 0.0 || p.delta_out < 0.0 || p.delta_outin < 0.0 {
            return Err(bad("laptime", "pit offsets must be nonnegative"));
        }
        if p.w_lo < 0.0 || p.w_hi < 0.0 || p.fuel_curvature < 0.0 || p.inlap_extra_recup < 0.0 {
            return Err(bad("laptime", "penalty weights, curvature and recuperation must be nonnegative"));
        }
        // The fuel benefit must stay decreasing across the whole input box.
        if p.k_f - p.fuel_curvature * (self.de_f_max() - self.de_f_nom()) <= 0.0 {
            return Err(bad("laptime", "fuel benefit must be decreasing on the input box"));
        }
        if let Some(&k) = self.pit.forbidden_laps.iter().find(|&&k| k >= self.n_laps) {
            return Err(bad("pit.forbidden_laps", &format!("lap {k} outside the race")));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RaceConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let hash = Sha256::digest(&bytes);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}
