//! Hybrid actor with a squashed Gaussian head for the fuel and battery
//! controls and a categorical head for the pit decision, plus twin critics.

use ndarray::{s, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::nn::Mlp;
use crate::compound::PitAction;
use crate::env::{AgentAction, Observation, OBS_DIM};
use crate::error::AgentError;

pub const CONT_DIM: usize = 2;
pub const N_PIT: usize = 4;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Actor output layout: means, raw log-stds, pit logits.
pub const ACTOR_OUT: usize = 2 * CONT_DIM + N_PIT;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub log_alpha_c: f64,
    pub log_alpha_d: f64,
}

impl PolicyParams {
    pub fn new(hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = |input: usize, out: usize| {
            let mut v = vec![input];
            v.extend_from_slice(hidden);
            v.push(out);
            v
        };
        let actor = Mlp::new(&sizes(OBS_DIM, ACTOR_OUT), &mut rng);
        let critic1 = Mlp::new(&sizes(OBS_DIM + CONT_DIM, N_PIT), &mut rng);
        let critic2 = Mlp::new(&sizes(OBS_DIM + CONT_DIM, N_PIT), &mut rng);
        PolicyParams {
            actor,
            target1: critic1.clone(),
            target2: critic2.clone(),
            critic1,
            critic2,
            log_alpha_c: 0.1f64.ln(),
            log_alpha_d: 0.1f64.ln(),
        }
    }

    pub fn hidden(&self) -> Vec<usize> {
        let s = self.actor.sizes();
        s[1..s.len() - 1].to_vec()
    }

    pub fn alpha_c(&self) -> f64 {
        self.log_alpha_c.exp()
    }

    pub fn alpha_d(&self) -> f64 {
        self.log_alpha_d.exp()
    }

    pub fn is_finite(&self) -> bool {
        [&self.actor, &self.critic1, &self.critic2, &self.target1, &self.target2].iter().all(|m| m.is_finite())
            && self.log_alpha_c.is_finite()
            && self.log_alpha_d.is_finite()
    }
}

/// Maps an unconstrained value to a log-std inside the allowed range.
pub(crate) fn squash_log_std(raw: f64) -> (f64, f64) {
    let t = raw.tanh();
    let half = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
    (LOG_STD_MIN + half * (t + 1.0), half * (1.0 - t * t))
}

/// Distribution parameters of both heads for a batch of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    /// Raw actor output, `batch x ACTOR_OUT`.
    pub raw: Array2<f64>,
    pub mean: Array2<f64>,
    pub log_std: Array2<f64>,
    pub probs: Array2<f64>,
    pub log_probs: Array2<f64>,
}

impl Heads {
    pub fn from_raw(raw: Array2<f64>) -> Result<Self, AgentError> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(AgentError::NonFiniteActivation("actor output"));
        }
        let mean = raw.slice(s![.., 0..CONT_DIM]).to_owned();
        let log_std = raw.slice(s![.., CONT_DIM..2 * CONT_DIM]).mapv(|v| squash_log_std(v).0);
        let logits = raw.slice(s![.., 2 * CONT_DIM..]);
        let mut log_probs = logits.to_owned();
        for mut row in log_probs.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        let probs = log_probs.mapv(f64::exp);
        Ok(Heads { raw, mean, log_std, probs, log_probs })
    }
}

pub fn obs_matrix(obs: &[Observation]) -> Array2<f64> {
    Array2::from_shape_fn((obs.len(), OBS_DIM), |(i, j)| obs[i].0[j])
}

pub fn actor_heads(params: &PolicyParams, x: &Array2<f64>) -> Result<Heads, AgentError> {
    Heads::from_raw(params.actor.forward(x))
}

/// Continuous-head parameters and pit probabilities for one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    pub mean: [f64; CONT_DIM],
    pub log_std: [f64; CONT_DIM],
    pub pit_probs: [f64; N_PIT],
}

pub fn policy_forward(obs: &Observation, params: &PolicyParams) -> Result<PolicyOutput, AgentError> {
    if obs.0.iter().any(|v| !v.is_finite()) {
        return Err(AgentError::NonFiniteActivation("observation"));
    }
    let h = actor_heads(params, &obs_matrix(std::slice::from_ref(obs)))?;
    let row = |a: ArrayView1<f64>| a.to_vec();
    let mean = row(h.mean.row(0));
    let ls = row(h.log_std.row(0));
    let p = row(h.probs.row(0));
    Ok(PolicyOutput { mean: [mean[0], mean[1]], log_std: [ls[0], ls[1]], pit_probs: [p[0], p[1], p[2], p[3]] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// Action in the actor's own coordinates: squashed controls in `(-1, 1)` and
/// the pit index. This is what the critics see.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawAction {
    pub a: [f64; CONT_DIM],
    pub pit: u8,
}

impl RawAction {
    pub fn to_agent_action(self) -> AgentAction {
        AgentAction {
            f: ((self.a[0] + 1.0) / 2.0).clamp(0.0, 1.0),
            b: self.a[1].clamp(-1.0, 1.0),
            ps: PitAction::new(self.pit).expect("pit index below 4"),
        }
    }

    pub fn from_agent_action(a: &AgentAction) -> Self {
        RawAction { a: [2.0 * a.f.clamp(0.0, 1.0) - 1.0, a.b.clamp(-1.0, 1.0)], pit: a.ps.code() }
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

pub fn act<R: Rng + ?Sized>(obs: &Observation, params: &PolicyParams, mode: ActMode, rng: &mut R) -> Result<RawAction, AgentError> {
    let out = policy_forward(obs, params)?;
    Ok(match mode {
        ActMode::Deterministic => RawAction { a: out.mean.map(f64::tanh), pit: argmax(&out.pit_probs) as u8 },
        ActMode::Stochastic => {
            let mut a = [0.0; CONT_DIM];
            for j in 0..CONT_DIM {
                let eps: f64 = StandardNormal.sample(rng);
                a[j] = (out.mean[j] + out.log_std[j].exp() * eps).tanh();
            }
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pit = N_PIT - 1;
            for (i, p) in out.pit_probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pit = i;
                    break;
                }
            }
            RawAction { a, pit: pit as u8 }
        }
    })
}

pub fn sample_action<R: Rng + ?Sized>(obs: &Observation, params: &PolicyParams, mode: ActMode, rng: &mut R) -> Result<AgentAction, AgentError> {
    act(obs, params, mode, rng).map(RawAction::to_agent_action)
}

/// Deterministic action, no randomness involved.
pub fn greedy_action(obs: &Observation, params: &PolicyParams) -> Result<AgentAction, AgentError> {
    let out = policy_forward(obs, params)?;
    Ok(RawAction { a: out.mean.map(f64::tanh), pit: argmax(&out.pit_probs) as u8 }.to_agent_action())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RaceConfig;
    use crate::env::reset;
    use crate::env::ScenarioSpec;

    fn first_obs() -> Observation {
        reset(ScenarioSpec::nominal(RaceConfig::default())).unwrap().1
    }

    #[test]
    fn probabilities_sum_to_one() {
        let p = PolicyParams::new(&[32, 32], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let mut o = first_obs();
            for v in o.0.iter_mut() {
                *v = rng.random_range(-3.0..3.0);
            }
            let out = policy_forward(&o, &p).unwrap();
            assert!((out.pit_probs.iter().sum::<f64>() - 1.0).abs() < 1e-7);
            assert!(out.log_std.iter().all(|l| (LOG_STD_MIN..=LOG_STD_MAX).contains(l)));
        }
    }

    #[test]
    fn zero_network_is_uniform_over_pit_codes() {
        let mut p = PolicyParams::new(&[8], 0);
        p.actor = Mlp::zeros(&p.actor.sizes());
        let out = policy_forward(&first_obs(), &p).unwrap();
        assert!(out.pit_probs.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn samples_stay_in_the_action_space() {
        let p = PolicyParams::new(&[16, 16], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let o = first_obs();
        for _ in 0..10_000 {
            let a = sample_action(&o, &p, ActMode::Stochastic, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&a.f) && (-1.0..=1.0).contains(&a.b) && a.ps.code() < 4);
        }
    }

    #[test]
    fn modes_are_reproducible() {
        let p = PolicyParams::new(&[16, 16], 5);
        let o = first_obs();
        let d1 = sample_action(&o, &p, ActMode::Deterministic, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let d2 = sample_action(&o, &p, ActMode::Deterministic, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1, greedy_action(&o, &p).unwrap());
        let s1 = sample_action(&o, &p, ActMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let s2 = sample_action(&o, &p, ActMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn non_finite_observation_is_rejected() {
        let p = PolicyParams::new(&[8], 0);
        let mut o = first_obs();
        o.0[0] = f64::NAN;
        assert!(matches!(policy_forward(&o, &p), Err(AgentError::NonFiniteActivation(_))));
    }
}
