//! Soft actor-critic update for the hybrid action space. The continuous head
//! and the pit head are independent given the observation; each has its own
//! temperature and entropy target.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::nn::{Adam, AdamConfig, MlpGrads};
use super::policy::{squash_log_std, Heads, PolicyParams, CONT_DIM, N_PIT};
use super::replay::Batch;
use crate::env::OBS_DIM;
use crate::error::AgentError;

const TANH_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub target_entropy_c: f64,
    pub target_entropy_d: f64,
    /// Rewards are multiplied by this before entering the critics.
    pub reward_scale: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            gamma: 1.0,
            tau: 0.005,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            lr_alpha: 3e-4,
            target_entropy_c: -2.0,
            target_entropy_d: 0.05,
            reward_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub alpha_c: f64,
    pub alpha_d: f64,
    /// Sample estimate of the continuous-head entropy.
    pub entropy_c: f64,
    pub entropy_d: f64,
    pub q_mean: f64,
}

impl Losses {
    fn all_finite(&self) -> bool {
        [self.critic1, self.critic2, self.actor, self.entropy_c, self.entropy_d, self.q_mean].iter().all(|v| v.is_finite())
    }
}

/// Reparameterized continuous sample: squashed action and its log density.
struct Squashed {
    a: Array2<f64>,
    log_pi: Array1<f64>,
}

fn squash(heads: &Heads, eps: &Array2<f64>) -> Squashed {
    let n = eps.nrows();
    let mut a = Array2::zeros((n, CONT_DIM));
    let mut log_pi = Array1::zeros(n);
    for b in 0..n {
        for j in 0..CONT_DIM {
            let ls = heads.log_std[(b, j)];
            let u = heads.mean[(b, j)] + ls.exp() * eps[(b, j)];
            let t = u.tanh();
            a[(b, j)] = t;
            log_pi[b] += -0.5 * eps[(b, j)].powi(2) - ls - HALF_LN_2PI - (1.0 - t * t + TANH_EPS).ln();
        }
    }
    Squashed { a, log_pi }
}

fn critic_input(obs: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[obs.view(), a.view()]).expect("matching rows")
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Soft TD targets `r + gamma^span * (1 - done) * V(s')` with `V` built from the
/// smaller of the two target critics and both entropy terms.
pub fn critic_targets(params: &PolicyParams, batch: &Batch, eps: &Array2<f64>, cfg: &SacConfig) -> Result<Array1<f64>, AgentError> {
    let heads = Heads::from_raw(params.actor.forward(&batch.next_obs))?;
    let sq = squash(&heads, eps);
    let z = critic_input(&batch.next_obs, &sq.a);
    let q1 = params.target1.forward(&z);
    let q2 = params.target2.forward(&z);
    let (ac, ad) = (params.alpha_c(), params.alpha_d());
    let mut y = Array1::zeros(batch.len());
    for b in 0..batch.len() {
        let mut v = -ac * sq.log_pi[b];
        for d in 0..N_PIT {
            v += heads.probs[(b, d)] * (q1[(b, d)].min(q2[(b, d)]) - ad * heads.log_probs[(b, d)]);
        }
        let cont = if batch.dones[b] { 0.0 } else { cfg.gamma.powi(batch.spans[b] as i32) * v };
        y[b] = cfg.reward_scale * batch.rewards[b] + cont;
    }
    Ok(y)
}

/// Result of the actor objective on a batch.
pub struct ActorPass {
    pub loss: f64,
    pub grads: MlpGrads,
    /// Mean of `-log pi` for the continuous head.
    pub entropy_c: f64,
    /// Mean categorical entropy.
    pub entropy_d: f64,
}

/// Actor objective `E[sum_d p_d (alpha_d log p_d - min Q_d) + alpha_c log pi_c]`
/// for fixed reparameterization noise, with its gradient.
pub fn actor_loss(params: &PolicyParams, obs: &Array2<f64>, eps: &Array2<f64>) -> Result<ActorPass, AgentError> {
    let n = obs.nrows();
    let nf = n as f64;
    let (raw, cache) = params.actor.forward_cached(obs);
    let heads = Heads::from_raw(raw)?;
    let sq = squash(&heads, eps);
    let z = critic_input(obs, &sq.a);
    let (q1, c1) = params.critic1.forward_cached(&z);
    let (q2, c2) = params.critic2.forward_cached(&z);
    let (ac, ad) = (params.alpha_c(), params.alpha_d());

    let mut loss = 0.0;
    let mut ent_d = 0.0;
    let mut g_logits = Array2::zeros((n, N_PIT));
    let mut g_q1 = Array2::zeros((n, N_PIT));
    let mut g_q2 = Array2::zeros((n, N_PIT));
    for b in 0..n {
        let mut h = [0.0; N_PIT];
        let mut mean_h = 0.0;
        for d in 0..N_PIT {
            let p = heads.probs[(b, d)];
            h[d] = ad * heads.log_probs[(b, d)] - q1[(b, d)].min(q2[(b, d)]);
            mean_h += p * h[d];
            ent_d -= p * heads.log_probs[(b, d)];
            if q1[(b, d)] <= q2[(b, d)] {
                g_q1[(b, d)] = -p / nf;
            } else {
                g_q2[(b, d)] = -p / nf;
            }
        }
        for d in 0..N_PIT {
            g_logits[(b, d)] = heads.probs[(b, d)] * (h[d] - mean_h) / nf;
        }
        loss += mean_h + ac * sq.log_pi[b];
    }
    let (_, gz1) = params.critic1.backward(&c1, &g_q1, false);
    let (_, gz2) = params.critic2.backward(&c2, &g_q2, false);
    let ga = &gz1.slice(s![.., OBS_DIM..]) + &gz2.slice(s![.., OBS_DIM..]);

    let mut g_out = Array2::zeros((n, 2 * CONT_DIM + N_PIT));
    for b in 0..n {
        for j in 0..CONT_DIM {
            let a = sq.a[(b, j)];
            let da = 1.0 - a * a;
            let g_u = ga[(b, j)] * da + ac / nf * 2.0 * a * da / (da + TANH_EPS);
            let ls = heads.log_std[(b, j)];
            let g_ls = g_u * ls.exp() * eps[(b, j)] - ac / nf;
            g_out[(b, j)] = g_u;
            g_out[(b, CONT_DIM + j)] = g_ls * squash_log_std(heads.raw[(b, CONT_DIM + j)]).1;
        }
    }
    g_out.slice_mut(s![.., 2 * CONT_DIM..]).assign(&g_logits);
    let (grads, _) = params.actor.backward(&cache, &g_out, true);
    Ok(ActorPass {
        loss: loss / nf,
        grads: grads.expect("requested"),
        entropy_c: -sq.log_pi.mean().unwrap_or(0.0),
        entropy_d: ent_d / nf,
    })
}

/// Learner state: parameters plus optimizer moments.
#[derive(Debug, Clone)]
pub struct Sac {
    pub params: PolicyParams,
    pub cfg: SacConfig,
    pub updates: usize,
    opt_actor: Adam,
    opt_c1: Adam,
    opt_c2: Adam,
    opt_alpha: Adam,
}

impl Sac {
    pub fn new(params: PolicyParams, cfg: SacConfig) -> Self {
        Sac {
            params,
            cfg,
            updates: 0,
            opt_actor: Adam::new(AdamConfig::with_lr(cfg.lr_actor)),
            opt_c1: Adam::new(AdamConfig::with_lr(cfg.lr_critic)),
            opt_c2: Adam::new(AdamConfig::with_lr(cfg.lr_critic)),
            opt_alpha: Adam::new(AdamConfig::with_lr(cfg.lr_alpha)),
        }
    }

    /// One gradient step on critics, actor and temperatures followed by the
    /// target update.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<Losses, AgentError> {
        if batch.len() < 2 {
            return Err(AgentError::Invalid("batch needs at least two transitions".into()));
        }
        let n = batch.len();
        let nf = n as f64;
        let eps_next = standard_normal(n, CONT_DIM, rng);
        let y = critic_targets(&self.params, batch, &eps_next, &self.cfg)?;

        let z = critic_input(&batch.obs, &batch.actions);
        let mut losses = Losses::default();
        let mut q_sum = 0.0;
        for which in 0..2 {
            let (net, opt) = if which == 0 { (&mut self.params.critic1, &mut self.opt_c1) } else { (&mut self.params.critic2, &mut self.opt_c2) };
            let (q, cache) = net.forward_cached(&z);
            let mut g = Array2::zeros((n, N_PIT));
            let mut l = 0.0;
            for b in 0..n {
                let d = batch.pits[b];
                let err = q[(b, d)] - y[b];
                l += err * err;
                g[(b, d)] = 2.0 * err / nf;
                q_sum += q[(b, d)];
            }
            let (grads, _) = net.backward(&cache, &g, true);
            opt.step_mlp(net, &grads.expect("requested"));
            if which == 0 {
                losses.critic1 = l / nf;
            } else {
                losses.critic2 = l / nf;
            }
        }
        losses.q_mean = q_sum / (2.0 * nf);

        let eps = standard_normal(n, CONT_DIM, rng);
        let pass = actor_loss(&self.params, &batch.obs, &eps)?;
        self.opt_actor.step_mlp(&mut self.params.actor, &pass.grads);
        losses.actor = pass.loss;
        losses.entropy_c = pass.entropy_c;
        losses.entropy_d = pass.entropy_d;

        let g_c = pass.entropy_c - self.cfg.target_entropy_c;
        let g_d = pass.entropy_d - self.cfg.target_entropy_d;
        losses.alpha_c = self.params.log_alpha_c * g_c;
        losses.alpha_d = self.params.log_alpha_d * g_d;
        let mut la = [self.params.log_alpha_c, self.params.log_alpha_d];
        self.opt_alpha.step(vec![&mut la[..]], vec![&[g_c, g_d][..]]);
        [self.params.log_alpha_c, self.params.log_alpha_d] = la.map(|v| v.clamp(-20.0, 5.0));

        let tau = self.cfg.tau;
        self.params.target1.polyak(&self.params.critic1, tau);
        self.params.target2.polyak(&self.params.critic2, tau);
        self.updates += 1;
        if !losses.all_finite() || !self.params.is_finite() {
            return Err(AgentError::NonFiniteLoss { update: self.updates, detail: format!("{losses:?}") });
        }
        Ok(losses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::nn::Mlp;
    use crate::agent::policy::RawAction;
    use crate::agent::replay::Transition;
    use crate::env::Observation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, zero_rewards: bool, rng: &mut ChaCha8Rng) -> Batch {
        let ts: Vec<Transition> = (0..n)
            .map(|_| {
                let mut o = [0.0; OBS_DIM];
                let mut o2 = [0.0; OBS_DIM];
                for j in 0..OBS_DIM {
                    o[j] = rng.random_range(-1.0..1.0);
                    o2[j] = rng.random_range(-1.0..1.0);
                }
                Transition {
                    obs: Observation(o),
                    action: RawAction { a: [rng.random_range(-0.99..0.99), rng.random_range(-0.99..0.99)], pit: rng.random_range(0..4) },
                    reward: if zero_rewards { 0.0 } else { rng.random_range(0.0..10.0) },
                    next_obs: Observation(o2),
                    done: false,
                    span: 1,
                }
            })
            .collect();
        Batch::from_transitions(&ts.iter().collect::<Vec<_>>())
    }

    #[test]
    fn zero_reward_targets_are_entropy_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = PolicyParams::new(&[16, 16], 2);
        p.target1 = Mlp::zeros(&p.target1.sizes());
        p.target2 = Mlp::zeros(&p.target2.sizes());
        let batch = random_batch(8, true, &mut rng);
        let eps = standard_normal(8, CONT_DIM, &mut rng);
        let y = critic_targets(&p, &batch, &eps, &SacConfig::default()).unwrap();
        let heads = Heads::from_raw(p.actor.forward(&batch.next_obs)).unwrap();
        let sq = squash(&heads, &eps);
        for b in 0..8 {
            let h_d: f64 = (0..N_PIT).map(|d| -heads.probs[(b, d)] * heads.log_probs[(b, d)]).sum();
            let expect = p.alpha_d() * h_d - p.alpha_c() * sq.log_pi[b];
            assert!((y[b] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn targets_are_pessimistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PolicyParams::new(&[16, 16], 4);
        let batch = random_batch(32, false, &mut rng);
        let eps = standard_normal(32, CONT_DIM, &mut rng);
        let cfg = SacConfig::default();
        let y = critic_targets(&p, &batch, &eps, &cfg).unwrap();
        let heads = Heads::from_raw(p.actor.forward(&batch.next_obs)).unwrap();
        let sq = squash(&heads, &eps);
        let z = critic_input(&batch.next_obs, &sq.a);
        for q in [p.target1.forward(&z), p.target2.forward(&z)] {
            for b in 0..32 {
                let v: f64 = (0..N_PIT).map(|d| heads.probs[(b, d)] * (q[(b, d)] - p.alpha_d() * heads.log_probs[(b, d)])).sum::<f64>()
                    - p.alpha_c() * sq.log_pi[b];
                assert!(y[b] <= cfg.reward_scale * batch.rewards[b] + v + 1e-12);
            }
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = PolicyParams::new(&[6, 5], 6);
        p.log_alpha_c = 0.3f64.ln();
        p.log_alpha_d = 0.2f64.ln();
        let batch = random_batch(3, false, &mut rng);
        let eps = standard_normal(3, CONT_DIM, &mut rng);
        let pass = actor_loss(&p, &batch.obs, &eps).unwrap();
        let h = 1e-6;
        let mut checked = 0;
        for l in 0..p.actor.layers.len() {
            let (rows, cols) = p.actor.layers[l].w.dim();
            for i in 0..rows {
                for j in 0..cols {
                    let mut plus = p.clone();
                    plus.actor.layers[l].w[(i, j)] += h;
                    let mut minus = p.clone();
                    minus.actor.layers[l].w[(i, j)] -= h;
                    let fd = (actor_loss(&plus, &batch.obs, &eps).unwrap().loss - actor_loss(&minus, &batch.obs, &eps).unwrap().loss) / (2.0 * h);
                    let an = pass.grads.layers[l].w[(i, j)];
                    let scale = fd.abs().max(an.abs());
                    if scale > 1e-8 {
                        assert!((fd - an).abs() <= 1e-4 * scale + 1e-9, "layer {l} ({i},{j}): fd {fd} vs {an}");
                        checked += 1;
                    }
                }
            }
            for j in 0..p.actor.layers[l].b.len() {
                let mut plus = p.clone();
                plus.actor.layers[l].b[j] += h;
                let mut minus = p.clone();
                minus.actor.layers[l].b[j] -= h;
                let fd = (actor_loss(&plus, &batch.obs, &eps).unwrap().loss - actor_loss(&minus, &batch.obs, &eps).unwrap().loss) / (2.0 * h);
                let an = pass.grads.layers[l].b[j];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()) + 1e-9, "bias {l} {j}: fd {fd} vs {an}");
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn thousand_updates_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut sac = Sac::new(PolicyParams::new(&[32, 32], 9), SacConfig::default());
        for _ in 0..1000 {
            let batch = random_batch(16, false, &mut rng);
            let l = sac.update(&batch, &mut rng).unwrap();
            assert!(l.all_finite());
            assert!(sac.params.alpha_c() > 0.0 && sac.params.alpha_d() > 0.0);
        }
    }

    #[test]
    fn tiny_batches_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut sac = Sac::new(PolicyParams::new(&[8], 9), SacConfig::default());
        let batch = random_batch(1, false, &mut rng);
        assert!(sac.update(&batch, &mut rng).is_err());
    }
}
