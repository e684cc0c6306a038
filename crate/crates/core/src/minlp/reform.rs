//! Polynomial reformulation of the discrete race logic. At integer pit and
//! compound codes every function here agrees with the logical update in
//! `model`; between integers they are smooth interpolants.

use crate::config::{RaceConfig, TireParams};

/// Pit indicator `1 - (1-ps)(2-ps)(3-ps)/6`.
pub fn aux_bps(ps: f64) -> f64 {
    1.0 - (1.0 - ps) * (2.0 - ps) * (3.0 - ps) / 6.0
}

pub fn aux_bps_deriv(ps: f64) -> f64 {
    let (a, b, c) = (1.0 - ps, 2.0 - ps, 3.0 - ps);
    (b * c + a * c + a * b) / 6.0
}

pub fn aux_z(tc: f64) -> [f64; 3] {
    [1.0 - tc, 2.0 - tc, 3.0 - tc]
}

/// Lagrange selector weights; `(1,0,0)`, `(0,1,0)`, `(0,0,1)` at tc = 1, 2, 3.
pub fn selector_weights(z: [f64; 3]) -> [f64; 3] {
    [0.5 * z[1] * z[2], -z[0] * z[2], 0.5 * z[0] * z[1]]
}

/// Derivative of [`selector_weights`] (composed with [`aux_z`]) in `tc`.
pub fn selector_weights_deriv(tc: f64) -> [f64; 3] {
    let z = aux_z(tc);
    [-0.5 * (z[1] + z[2]), z[0] + z[2], -0.5 * (z[0] + z[1])]
}

pub fn smooth_tc_update(tc: f64, ps: f64, b_ps: f64) -> f64 {
    tc * (1.0 - b_ps) + ps
}

pub fn smooth_bcomp_update(b: f64, tc: f64, ps: f64, b_ps: f64) -> f64 {
    b + (ps - tc) * (ps - tc) * b_ps
}

/// Wear update as a selector blend of the three compound recursions.
pub fn smooth_tw_update(tw: f64, m_car: f64, tc: f64, b_ps: f64, cfg: &RaceConfig) -> f64 {
    let w = selector_weights(aux_z(tc));
    let ratio = m_car / cfg.m_car_init();
    let f: f64 = cfg.tires.wears().iter().zip(w).map(|(c, wj)| wj * (c.a * tw + c.b * ratio + c.c)).sum();
    (1.0 - b_ps) * f
}

/// Bilinear blend of the four lap-kind map values `[normal, in, out, outin]`.
pub fn smooth_tnom(b_inlap: f64, b_outlap: f64, t: [f64; 4]) -> f64 {
    (1.0 - b_inlap) * (1.0 - b_outlap) * t[0]
        + b_inlap * (1.0 - b_outlap) * t[1]
        + (1.0 - b_inlap) * b_outlap * t[2]
        + b_inlap * b_outlap * t[3]
}

pub fn smooth_dt(tw: f64, tc: f64, tires: &TireParams) -> f64 {
    let w = selector_weights(aux_z(tc));
    tires.corrections().iter().zip(w).map(|(c, wj)| wj * (c.d + c.e * tw * tw)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compound::{Compound, PitAction};
    use crate::laptime::{nominal_lap_time, tire_correction, LapKind, MapPoint};
    use crate::model::{update_b_compound, update_compound, update_tire_wear};

    #[test]
    fn bps_values() {
        assert_eq!(aux_bps(0.0), 0.0);
        for p in [1.0, 2.0, 3.0] {
            assert_eq!(aux_bps(p), 1.0);
        }
        assert!((aux_bps(0.5) - 0.6875).abs() < 1e-15);
    }

    #[test]
    fn z_and_weights_rows() {
        assert_eq!(aux_z(1.0), [0.0, 1.0, 2.0]);
        assert_eq!(aux_z(2.0), [-1.0, 0.0, 1.0]);
        assert_eq!(aux_z(3.0), [-2.0, -1.0, 0.0]);
        assert_eq!(selector_weights(aux_z(1.0)), [1.0, 0.0, 0.0]);
        assert_eq!(selector_weights(aux_z(2.0)), [0.0, 1.0, 0.0]);
        assert_eq!(selector_weights(aux_z(3.0)), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for i in 0..=30 {
            let x = i as f64 * 0.1;
            let h = 1e-6;
            let fd = (aux_bps(x + h) - aux_bps(x - h)) / (2.0 * h);
            assert!((fd - aux_bps_deriv(x)).abs() < 1e-8);
            let wp = selector_weights(aux_z(x + h));
            let wm = selector_weights(aux_z(x - h));
            let d = selector_weights_deriv(x);
            for j in 0..3 {
                assert!(((wp[j] - wm[j]) / (2.0 * h) - d[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn discrete_updates_agree_on_all_pairs() {
        for tc in Compound::ALL {
            for code in 0..=3u8 {
                let ps = PitAction::new(code).unwrap();
                let p = code as f64;
                let t = tc.code() as f64;
                let b = aux_bps(p);
                assert_eq!(smooth_tc_update(t, p, b), update_compound(tc, ps).code() as f64);
                let logical = update_b_compound(0, tc, ps);
                assert_eq!(smooth_bcomp_update(0.0, t, p, b) >= 1.0, logical >= 1);
            }
        }
        assert_eq!(smooth_bcomp_update(0.0, 1.0, 3.0, 1.0), 4.0);
        assert_eq!(smooth_bcomp_update(0.0, 2.0, 2.0, 1.0), 0.0);
    }

    #[test]
    fn blends_at_integers() {
        let cfg = RaceConfig::default();
        let t = [93.1, 104.6, 108.2, 119.7];
        assert_eq!(smooth_tnom(0.0, 0.0, t), 93.1);
        assert_eq!(smooth_tnom(1.0, 1.0, t), 119.7);
        assert_eq!(smooth_tnom(1.0, 0.0, t), 104.6);
        assert_eq!(smooth_dt(0.0, 1.0, &cfg.tires), 0.0);
        assert_eq!(smooth_dt(0.0, 3.0, &cfg.tires), 2.0);
        let m = 870.0;
        for tc in Compound::ALL {
            let tw = 0.37;
            let expect = update_tire_wear(tw, m, cfg.m_car_init(), tc, PitAction::STAY, &cfg.tires);
            assert!((smooth_tw_update(tw, m, tc.code() as f64, 0.0, &cfg) - expect).abs() < 1e-12);
            assert!((smooth_dt(tw, tc.code() as f64, &cfg.tires) - tire_correction(tw, tc, &cfg.tires)).abs() < 1e-12);
        }
        assert_eq!(smooth_tw_update(0.4, m, 1.0, 1.0, &cfg), 0.0);
        let pt = MapPoint { e_b: 4.0, de_b: 0.0, de_f: cfg.de_f_nom(), m_car: 898.0 };
        let maps = LapKind::ALL.map(|k| nominal_lap_time(&pt, k, &cfg.laptime, &cfg));
        assert!((smooth_tnom(1.0, 0.0, maps) - 104.6).abs() < 1e-9);
    }
}
