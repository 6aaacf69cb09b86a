//! Uniform experience replay with n-step window assembly, and the
//! most-recent-round collector used for on-policy discriminator batches.

use std::collections::VecDeque;

use rand::Rng;

use crate::envs::Pair;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    /// Synthetic reward written at collection time.
    pub syn_reward: f64,
    pub next_state: Vec<f64>,
    /// True termination. Horizon truncation is recorded as an episode end
    /// on the buffer instead.
    pub terminal: bool,
}

/// Consecutive transitions `t..t+k` of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct NStepSample {
    window: Vec<Transition>,
}

impl NStepSample {
    pub fn new(window: Vec<Transition>) -> Result<Self> {
        if window.is_empty() {
            return Err(Error::Contract("n-step window needs k >= 1".into()));
        }
        if window[..window.len() - 1].iter().any(|t| t.terminal) {
            return Err(Error::Contract("terminal transition inside an n-step window".into()));
        }
        Ok(Self { window })
    }

    pub fn k(&self) -> usize {
        self.window.len()
    }

    pub fn first(&self) -> &Transition {
        &self.window[0]
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.window
    }

    pub fn state(&self) -> &[f64] {
        &self.window[0].state
    }

    pub fn action(&self) -> &[f64] {
        &self.window[0].action
    }

    /// Stored synthetic rewards `r_t .. r_{t+k-1}`.
    pub fn rewards(&self) -> Vec<f64> {
        self.window.iter().map(|t| t.syn_reward).collect()
    }

    /// `s_{t+k}`.
    pub fn bootstrap_state(&self) -> &[f64] {
        &self.window[self.window.len() - 1].next_state
    }

    /// True when the window ends on a true terminal.
    pub fn bootstrap_masked(&self) -> bool {
        self.window[self.window.len() - 1].terminal
    }
}

/// `Σ_j γ^j r_j`, accumulated front to back.
pub fn discounted_sum(rewards: &[f64], gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    items: VecDeque<Transition>,
    /// `ends[i]` marks the last transition of an episode.
    ends: VecDeque<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
            ends: VecDeque::with_capacity(capacity.min(1 << 20)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn is_episode_end(&self, i: usize) -> bool {
        self.ends.get(i).copied().unwrap_or(false)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        check_dim("transition state", self.state_dim, t.state.len())?;
        check_dim("transition next_state", self.state_dim, t.next_state.len())?;
        check_dim("transition action", self.action_dim, t.action.len())?;
        if self.items.len() == self.capacity {
            self.items.pop_front();
            self.ends.pop_front();
        }
        let terminal = t.terminal;
        self.items.push_back(t);
        self.ends.push_back(terminal);
        Ok(())
    }

    /// Closes the current episode at the most recent transition.
    pub fn mark_episode_end(&mut self) {
        if let Some(last) = self.ends.back_mut() {
            *last = true;
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer("uniform sample from empty replay".into()));
        }
        Ok((0..batch)
            .map(|_| self.items[rng.random_range(0..self.items.len())].clone())
            .collect())
    }

    /// The window starting at stored index `start`, cut at `n`, at an
    /// episode end, or at the newest transition.
    pub fn window(&self, start: usize, n: usize) -> Result<NStepSample> {
        if n == 0 {
            return Err(Error::Config("n-step length must be at least 1".into()));
        }
        if start >= self.len() {
            return Err(Error::Contract(format!("window start {start} out of range")));
        }
        let mut window = Vec::with_capacity(n);
        for j in start..self.len().min(start + n) {
            window.push(self.items[j].clone());
            if self.ends[j] {
                break;
            }
        }
        NStepSample::new(window)
    }

    pub fn sample_nstep<R: Rng + ?Sized>(
        &self,
        batch: usize,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<NStepSample>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer("n-step sample from empty replay".into()));
        }
        (0..batch)
            .map(|_| self.window(rng.random_range(0..self.len()), n))
            .collect()
    }
}

/// Pairs visited during the latest collection round only.
#[derive(Debug, Clone, Default)]
pub struct RoundCollector {
    pairs: Vec<Pair>,
}

impl RoundCollector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops the previous round.
    pub fn start_round(&mut self) {
        self.pairs.clear();
    }

    pub fn push(&mut self, pair: Pair) {
        self.pairs.push(pair);
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn recent_batch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<Pair>> {
        if self.pairs.is_empty() {
            return Err(Error::Contract("no collection round has completed".into()));
        }
        Ok((0..batch)
            .map(|_| self.pairs[rng.random_range(0..self.pairs.len())].clone())
            .collect())
    }
}
