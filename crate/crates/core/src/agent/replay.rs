use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{RawAction, CONT_DIM};
use crate::env::{Observation, OBS_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub action: RawAction,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
    /// Environment steps between `obs` and `next_obs`; `reward` is their
    /// discounted sum.
    #[serde(default = "one")]
    pub span: u32,
}

fn one() -> u32 {
    1
}

/// Column-stacked transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub pits: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_obs: Array2<f64>,
    pub dones: Vec<bool>,
    pub spans: Vec<u32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions(ts: &[&Transition]) -> Self {
        let n = ts.len();
        Batch {
            obs: Array2::from_shape_fn((n, OBS_DIM), |(i, j)| ts[i].obs.0[j]),
            actions: Array2::from_shape_fn((n, CONT_DIM), |(i, j)| ts[i].action.a[j]),
            pits: ts.iter().map(|t| t.action.pit as usize).collect(),
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_obs: Array2::from_shape_fn((n, OBS_DIM), |(i, j)| ts[i].next_obs.0[j]),
            dones: ts.iter().map(|t| t.done).collect(),
            spans: ts.iter().map(|t| t.span).collect(),
        }
    }
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { capacity, data: Vec::with_capacity(capacity.min(1 << 20)), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Batch {
        assert!(!self.data.is_empty(), "sampling from an empty buffer");
        let picks: Vec<&Transition> = (0..n).map(|_| &self.data[rng.random_range(0..self.data.len())]).collect();
        Batch::from_transitions(&picks)
    }
}

/// Folds single steps into `n`-step transitions. Episodes ending early flush
/// shorter ones.
#[derive(Debug, Clone)]
pub struct NStepQueue {
    n: usize,
    gamma: f64,
    pending: VecDeque<(Observation, RawAction, f64)>,
}

impl NStepQueue {
    pub fn new(n: usize, gamma: f64) -> Self {
        assert!(n > 0, "n-step horizon must be positive");
        NStepQueue { n, gamma, pending: VecDeque::with_capacity(n) }
    }

    fn emit(&self, next_obs: Observation, done: bool) -> Transition {
        let (obs, action, _) = self.pending[0];
        let reward = self.pending.iter().rev().fold(0.0, |acc, &(_, _, r)| r + self.gamma * acc);
        Transition { obs, action, reward, next_obs, done, span: self.pending.len() as u32 }
    }

    /// Records one step and returns the transitions that became complete.
    pub fn push(&mut self, obs: Observation, action: RawAction, reward: f64, next_obs: Observation, done: bool) -> Vec<Transition> {
        self.pending.push_back((obs, action, reward));
        let mut out = Vec::new();
        if done {
            while !self.pending.is_empty() {
                out.push(self.emit(next_obs, true));
                self.pending.pop_front();
            }
        } else if self.pending.len() == self.n {
            out.push(self.emit(next_obs, false));
            self.pending.pop_front();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(i: usize) -> Transition {
        let o = Observation([i as f64; OBS_DIM]);
        Transition { obs: o, action: RawAction { a: [0.0, 0.0], pit: 0 }, reward: i as f64, next_obs: o, done: false, span: 1 }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(t(i));
        }
        assert_eq!(b.len(), 3);
        let mut rewards: Vec<f64> = b.data.iter().map(|t| t.reward).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_roughly_uniform() {
        let mut b = ReplayBuffer::new(4);
        for i in 0..4 {
            b.push(t(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = b.sample(40_000, &mut rng);
        let mut counts = [0usize; 4];
        for r in &batch.rewards {
            counts[*r as usize] += 1;
        }
        assert!(counts.iter().all(|&c| (9_500..10_500).contains(&c)), "{counts:?}");
        assert_eq!(batch.obs[(5, 0)], batch.rewards[5]);
    }

    #[test]
    fn n_step_sums_rewards_and_flushes_at_the_end() {
        let mut q = NStepQueue::new(3, 0.5);
        let o = |i: usize| Observation([i as f64; OBS_DIM]);
        let a = RawAction { a: [0.0, 0.0], pit: 0 };
        let mut out = Vec::new();
        for i in 0..5 {
            out.extend(q.push(o(i), a, 1.0, o(i + 1), i == 4));
        }
        let spans: Vec<u32> = out.iter().map(|t| t.span).collect();
        assert_eq!(spans, vec![3, 3, 3, 2, 1]);
        assert_eq!(out[0].reward, 1.75);
        assert_eq!(out[0].next_obs, o(3));
        assert!(!out[0].done);
        assert_eq!(out[3].reward, 1.5);
        assert!(out[2..].iter().all(|t| t.done && t.next_obs == o(5)));
        assert!(q.push(o(0), a, 1.0, o(1), false).is_empty());
    }
}
